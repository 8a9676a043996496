"""Exception types shared across the package."""


class RideMatchError(Exception):
    """Base class for all package-specific errors."""


class InputError(RideMatchError):
    """An operation was called with arguments that violate its contract."""


class ConfigError(RideMatchError):
    """Configuration failed validation.

    Carries every violation found, not just the first, so a bad config can
    be fixed in one pass.  Each violation is a ``(field_path, message)``
    pair, e.g. ``("learner.gamma", "must be in (0, 1)")``.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        detail = "; ".join(f"{path}: {msg}" for path, msg in self.violations)
        super().__init__(f"config error: {detail}")


class SnapshotError(RideMatchError):
    """A serialized value table could not be parsed."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")
