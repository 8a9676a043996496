"""Driver value estimation.

A factor-indexed table of dollar values realizes a linear, coarse-coded
approximation of the expected discounted future earnings of an available
driver.  Values are learned online from completed (or virtual idle)
transitions with temporal-difference updates; discounting is per second,
exponentiated by the transition duration, so long trips are discounted
more than short ones.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

from .errors import InputError, SnapshotError
from .spacetime import Factor, FactorKind, WeightedFactorSet, validate_factor

TRANSITION_TRIP = "trip"
TRANSITION_IDLE = "idle"

# Snapshot wire format (all integers little-endian):
#   magic "RLVT", version u16, default_value f64, entry count u64, then per
#   entry: kind u8, key bytes (cell code as u8 length + ASCII, bucket index
#   u64, as the kind requires), value f64, update count u64.
_MAGIC = b"RLVT"
_VERSION = 1

# Used to sanity-check that per-second discounting cannot underflow to zero
# over any plausible transition duration.
_MAX_DURATION_S = 86_400.0


@dataclass(frozen=True)
class LearnerConfig:
    """Step size, per-second discount, and idle-transition shape."""

    alpha: float = 0.05
    gamma: float = 0.9999
    idle_duration_s: float = 4.0
    default_value: float = 0.0

    def validate(self) -> list[tuple[str, str]]:
        """Return (field, message) pairs for every violated constraint."""
        problems = []
        if not math.isfinite(self.alpha) or not 0.0 < self.alpha <= 1.0:
            problems.append(("alpha", f"must be in (0, 1], got {self.alpha!r}"))
        if not math.isfinite(self.gamma) or not 0.0 < self.gamma < 1.0:
            problems.append(("gamma", f"must be in (0, 1), got {self.gamma!r}"))
        elif self.gamma ** _MAX_DURATION_S <= 0.0:
            problems.append(("gamma", f"gamma**d underflows to 0 for d <= {_MAX_DURATION_S}"))
        if not math.isfinite(self.idle_duration_s) or self.idle_duration_s <= 0:
            problems.append(("idle_duration_s", f"must be > 0, got {self.idle_duration_s!r}"))
        if not math.isfinite(self.default_value):
            problems.append(("default_value", f"must be finite, got {self.default_value!r}"))
        return problems


@dataclass(frozen=True)
class Transition:
    """One driver transition: a completed trip or a virtual idle step."""

    from_state: WeightedFactorSet
    to_state: WeightedFactorSet
    reward: float
    duration_s: float
    cancel_prob: float
    kind: str = TRANSITION_TRIP


def validate_transition(tr: Transition, cfg: LearnerConfig) -> None:
    if tr.kind not in (TRANSITION_TRIP, TRANSITION_IDLE):
        raise InputError(f"transition kind must be 'trip' or 'idle', got {tr.kind!r}")
    if not math.isfinite(tr.reward) or tr.reward < 0:
        raise InputError(f"reward must be finite and >= 0, got {tr.reward!r}")
    if not math.isfinite(tr.duration_s) or tr.duration_s <= 0:
        raise InputError(f"duration_s must be > 0, got {tr.duration_s!r}")
    if not math.isfinite(tr.cancel_prob) or not 0.0 <= tr.cancel_prob <= 1.0:
        raise InputError(f"cancel_prob must be in [0, 1], got {tr.cancel_prob!r}")
    if tr.kind == TRANSITION_IDLE:
        if tr.reward != 0.0:
            raise InputError("idle transitions carry zero reward")
        if tr.cancel_prob != 0.0:
            raise InputError("idle transitions carry zero cancel probability")
        if tr.duration_s != cfg.idle_duration_s:
            raise InputError(
                f"idle transition duration {tr.duration_s!r} != configured {cfg.idle_duration_s!r}"
            )


@dataclass
class ValueTable:
    """Mutable factor-value store.

    Single writer, many readers: the matching cycle both evaluates and
    updates it, so no locking is needed inside one simulation.
    """

    default_value: float = 0.0
    values: dict[Factor, float] = field(default_factory=dict)
    update_counts: dict[Factor, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not math.isfinite(self.default_value):
            raise InputError(f"default_value must be finite, got {self.default_value!r}")

    def value_of(self, factor: Factor) -> float:
        return self.values.get(factor, self.default_value)

    def __len__(self) -> int:
        return len(self.values)

    def copy(self) -> "ValueTable":
        return ValueTable(self.default_value, dict(self.values), dict(self.update_counts))


def evaluate(table: ValueTable, state: WeightedFactorSet) -> float:
    """V(s): the weighted sum of factor values, defaulting unseen factors."""
    total = 0.0
    values = table.values
    default = table.default_value
    for factor, weight in state.entries:
        total += weight * values.get(factor, default)
    return total


def advantage(
    table: ValueTable,
    state: WeightedFactorSet,
    dest_state: WeightedFactorSet,
    reward: float,
    duration_s: float,
    cancel_prob: float,
    cfg: LearnerConfig,
) -> float:
    """Expected long-run gain of a trip over staying put.

    reward + (1 - cancel_prob) * (gamma**duration * V(dest) - V(here)).
    Cancellation voids the state change but not the (expected) fare term.
    """
    if not math.isfinite(reward):
        raise InputError(f"reward must be finite, got {reward!r}")
    if not math.isfinite(duration_s) or duration_s <= 0:
        raise InputError(f"duration_s must be > 0, got {duration_s!r}")
    if not math.isfinite(cancel_prob) or not 0.0 <= cancel_prob <= 1.0:
        raise InputError(f"cancel_prob must be in [0, 1], got {cancel_prob!r}")
    discounted_dest = cfg.gamma ** duration_s * evaluate(table, dest_state)
    return reward + (1.0 - cancel_prob) * (discounted_dest - evaluate(table, state))


def td_update(table: ValueTable, tr: Transition, cfg: LearnerConfig) -> ValueTable:
    """Apply one temporal-difference update in place and return the table.

    Every factor of the origin state moves by alpha * weight * delta where
    delta = reward + gamma**duration * V(to) - V(from), computed against
    the pre-update table.  A non-finite delta rejects the update and
    leaves the table untouched.
    """
    validate_transition(tr, cfg)
    v_from = evaluate(table, tr.from_state)
    v_to = evaluate(table, tr.to_state)
    delta = tr.reward + cfg.gamma ** tr.duration_s * v_to - v_from
    if not math.isfinite(delta):
        raise InputError(f"non-finite TD error {delta!r}; update rejected")
    values = table.values
    counts = table.update_counts
    default = table.default_value
    alpha = cfg.alpha
    for factor, weight in tr.from_state.entries:
        values[factor] = values.get(factor, default) + alpha * weight * delta
        counts[factor] = counts.get(factor, 0) + 1
    return table


def _factor_sort_key(factor: Factor) -> tuple[int, str, int]:
    return (int(factor.kind), factor.cell or "", -1 if factor.bucket is None else factor.bucket)


def snapshot(table: ValueTable) -> bytes:
    """Serialize a value table to the versioned binary snapshot format."""
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<Hd", _VERSION, table.default_value)
    out += struct.pack("<Q", len(table.values))
    for factor in sorted(table.values, key=_factor_sort_key):
        validate_factor(factor)
        kind = int(factor.kind)
        out += struct.pack("<B", kind)
        if kind in (FactorKind.SPATIAL, FactorKind.INTERACTION):
            code = factor.cell.encode("ascii")
            out += struct.pack("<B", len(code))
            out += code
        if kind in (FactorKind.TEMPORAL, FactorKind.INTERACTION):
            out += struct.pack("<Q", factor.bucket)
        out += struct.pack("<dQ", table.values[factor], table.update_counts.get(factor, 0))
    return bytes(out)


def restore(data: bytes) -> ValueTable:
    """Parse a snapshot back into a value table.

    Truncated or malformed payloads raise SnapshotError with the offending
    byte offset; a partially-restored table is never returned.
    """
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise SnapshotError(f"truncated snapshot while reading {what}", pos)
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != _MAGIC:
        raise SnapshotError("bad magic; not a value-table snapshot", 0)
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != _VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}", 4)
    (default_value,) = struct.unpack("<d", take(8, "default value"))
    if not math.isfinite(default_value):
        raise SnapshotError(f"non-finite default value {default_value!r}", pos - 8)
    (count,) = struct.unpack("<Q", take(8, "entry count"))
    values: dict[Factor, float] = {}
    counts: dict[Factor, int] = {}
    for i in range(count):
        entry_start = pos
        (kind_code,) = struct.unpack("<B", take(1, f"entry {i} kind"))
        if kind_code not in (0, 1, 2):
            raise SnapshotError(f"unknown factor kind {kind_code}", entry_start)
        kind = FactorKind(kind_code)
        cell = None
        bucket = None
        if kind in (FactorKind.SPATIAL, FactorKind.INTERACTION):
            (code_len,) = struct.unpack("<B", take(1, f"entry {i} cell length"))
            raw = bytes(take(code_len, f"entry {i} cell code"))
            try:
                cell = raw.decode("ascii")
            except UnicodeDecodeError:
                raise SnapshotError(f"non-ASCII cell code in entry {i}", entry_start) from None
        if kind in (FactorKind.TEMPORAL, FactorKind.INTERACTION):
            (bucket,) = struct.unpack("<Q", take(8, f"entry {i} bucket"))
        value, update_count = struct.unpack("<dQ", take(16, f"entry {i} value"))
        factor = Factor(kind, cell, bucket)
        try:
            validate_factor(factor)
        except InputError as exc:
            raise SnapshotError(f"invalid factor in entry {i}: {exc}", entry_start) from None
        if factor in values:
            raise SnapshotError(f"duplicate factor in entry {i}", entry_start)
        values[factor] = value
        counts[factor] = update_count
    if pos != len(view):
        raise SnapshotError(f"{len(view) - pos} trailing bytes after last entry", pos)
    return ValueTable(default_value, values, counts)
