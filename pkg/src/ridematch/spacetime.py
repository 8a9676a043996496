"""Spatiotemporal state coding.

Continuous (lat, lon, time) positions are discretized onto a base-32
geohash grid plus fixed-width time buckets, then expressed as a small
weighted set of overlapping factors: the containing cell and its eight
neighbors (weights inversely proportional to the distance from each cell
center), the containing time bucket, and cell-bucket interaction pairs.
Nearby positions share factors, so dollar-value estimates indexed by
factor generalize across space and time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import NamedTuple

from .errors import InputError

EARTH_RADIUS_M = 6_371_000.0

MIN_PRECISION = 1
MAX_PRECISION = 12

_BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_CHAR_INDEX = {c: i for i, c in enumerate(_BASE32)}


@dataclass(frozen=True)
class GeoPoint:
    """A WGS-84 coordinate in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        lat, lon = self.lat, self.lon
        if not isinstance(lat, (int, float)) or not math.isfinite(lat) or not -90.0 <= lat <= 90.0:
            raise InputError(f"latitude must be finite and in [-90, 90], got {lat!r}")
        if not isinstance(lon, (int, float)) or not math.isfinite(lon) or not -180.0 <= lon <= 180.0:
            raise InputError(f"longitude must be finite and in [-180, 180], got {lon!r}")


@dataclass(frozen=True, order=True)
class CellId:
    """A base-32 grid cell; the code length is the precision."""

    code: str

    def __post_init__(self) -> None:
        if not MIN_PRECISION <= len(self.code) <= MAX_PRECISION:
            raise InputError(
                f"cell code length must be in [{MIN_PRECISION}, {MAX_PRECISION}], got {self.code!r}"
            )
        for ch in self.code:
            if ch not in _CHAR_INDEX:
                raise InputError(f"invalid cell code character {ch!r} in {self.code!r}")

    @property
    def precision(self) -> int:
        return len(self.code)


class TimeBucket(NamedTuple):
    """A fixed-width absolute time bucket (index = floor(t / width))."""

    index: int
    width_s: float


def time_bucket(t: float, width_s: float) -> TimeBucket:
    """Bucket a nonnegative timestamp (seconds) into a fixed-width window."""
    if not math.isfinite(t) or t < 0:
        raise InputError(f"timestamp must be finite and >= 0, got {t!r}")
    if not math.isfinite(width_s) or width_s <= 0:
        raise InputError(f"bucket width must be finite and > 0, got {width_s!r}")
    return TimeBucket(int(t // width_s), width_s)


class FactorKind(IntEnum):
    """Factor families making up a coded state.

    The integer values double as the on-disk kind codes in value-table
    snapshots, so they must never be renumbered.
    """

    SPATIAL = 0
    TEMPORAL = 1
    INTERACTION = 2


class Factor(NamedTuple):
    """One coarse-coding feature: a cell, a time bucket, or a cell-bucket pair."""

    kind: FactorKind
    cell: str | None
    bucket: int | None


def spatial_factor(cell: str) -> Factor:
    return Factor(FactorKind.SPATIAL, cell, None)


def temporal_factor(bucket: int) -> Factor:
    return Factor(FactorKind.TEMPORAL, None, bucket)


def interaction_factor(cell: str, bucket: int) -> Factor:
    return Factor(FactorKind.INTERACTION, cell, bucket)


def validate_factor(factor: Factor) -> None:
    """Raise InputError unless the factor's key components match its kind."""
    kind, cell, bucket = factor
    if kind == FactorKind.SPATIAL:
        ok = cell is not None and bucket is None
    elif kind == FactorKind.TEMPORAL:
        ok = cell is None and bucket is not None
    elif kind == FactorKind.INTERACTION:
        ok = cell is not None and bucket is not None
    else:
        ok = False
    if not ok:
        raise InputError(f"malformed factor {factor!r}")
    if cell is not None:
        CellId(cell)  # validates code; raises InputError for garbage
    if bucket is not None and (not isinstance(bucket, int) or bucket < 0):
        raise InputError(f"factor bucket must be a nonnegative int, got {bucket!r}")


@dataclass(frozen=True)
class WeightedFactorSet:
    """The coded form of one continuous state: (factor, weight) entries.

    Within each factor kind the weights are normalized to sum to one.
    """

    entries: tuple[tuple[Factor, float], ...]

    def factors(self) -> tuple[Factor, ...]:
        return tuple(f for f, _ in self.entries)

    def validate(self) -> None:
        seen: set[Factor] = set()
        sums: dict[FactorKind, float] = {}
        for factor, weight in self.entries:
            validate_factor(factor)
            if factor in seen:
                raise InputError(f"duplicate factor {factor!r}")
            seen.add(factor)
            if not math.isfinite(weight) or weight <= 0:
                raise InputError(f"factor weight must be finite and > 0, got {weight!r}")
            sums[factor.kind] = sums.get(factor.kind, 0.0) + weight
        for kind, total in sums.items():
            if abs(total - 1.0) > 1e-9:
                raise InputError(f"{kind.name} weights sum to {total!r}, expected 1.0")


@dataclass(frozen=True)
class CodingConfig:
    """Controls the resolution of the spatiotemporal coding."""

    cell_precision: int = 6
    bucket_width_s: float = 3600.0
    epsilon_m: float = 1.0
    use_spatial: bool = True
    use_temporal: bool = True
    use_interaction: bool = True

    def validate(self) -> list[tuple[str, str]]:
        """Return (field, message) pairs for every violated constraint."""
        problems = []
        if not isinstance(self.cell_precision, int) or not MIN_PRECISION <= self.cell_precision <= MAX_PRECISION:
            problems.append(
                ("cell_precision", f"must be an int in [{MIN_PRECISION}, {MAX_PRECISION}], got {self.cell_precision!r}")
            )
        if not math.isfinite(self.bucket_width_s) or self.bucket_width_s <= 0:
            problems.append(("bucket_width_s", f"must be > 0, got {self.bucket_width_s!r}"))
        if not math.isfinite(self.epsilon_m) or self.epsilon_m <= 0:
            problems.append(("epsilon_m", f"must be > 0, got {self.epsilon_m!r}"))
        if not (self.use_spatial or self.use_temporal or self.use_interaction):
            problems.append(("use_spatial", "at least one factor kind must be enabled"))
        return problems


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a spherical earth."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = math.radians(b.lat - a.lat)
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def encode_cell(point: GeoPoint, precision: int) -> CellId:
    """Encode a point into the base-32 cell containing it.

    Bits alternate longitude-first; every five bits emit one base-32
    character, so a precision-6 cell spans roughly 1.2 km x 0.6 km.
    """
    if not isinstance(precision, int) or not MIN_PRECISION <= precision <= MAX_PRECISION:
        raise InputError(f"precision must be an int in [{MIN_PRECISION}, {MAX_PRECISION}], got {precision!r}")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bits = 0
    value = 0
    even = True  # longitude bit next
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2.0
            if point.lon >= mid:
                value = (value << 1) | 1
                lon_lo = mid
            else:
                value = value << 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2.0
            if point.lat >= mid:
                value = (value << 1) | 1
                lat_lo = mid
            else:
                value = value << 1
                lat_hi = mid
        even = not even
        bits += 1
        if bits == 5:
            chars.append(_BASE32[value])
            bits = 0
            value = 0
    return CellId("".join(chars))


def decode_bounds(cell: CellId) -> tuple[float, float, float, float]:
    """Return (lat_lo, lat_hi, lon_lo, lon_hi) of a cell's bounding box."""
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for ch in cell.code:
        value = _CHAR_INDEX[ch]
        for shift in (4, 3, 2, 1, 0):
            bit = (value >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2.0
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2.0
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return lat_lo, lat_hi, lon_lo, lon_hi


def cell_center(cell: CellId) -> GeoPoint:
    lat_lo, lat_hi, lon_lo, lon_hi = decode_bounds(cell)
    return GeoPoint((lat_lo + lat_hi) / 2.0, (lon_lo + lon_hi) / 2.0)


def cell_spans(precision: int) -> tuple[float, float]:
    """Degree extents (dlat, dlon) of any cell at the given precision."""
    if not isinstance(precision, int) or not MIN_PRECISION <= precision <= MAX_PRECISION:
        raise InputError(f"precision must be an int in [{MIN_PRECISION}, {MAX_PRECISION}], got {precision!r}")
    total_bits = 5 * precision
    lon_bits = (total_bits + 1) // 2
    lat_bits = total_bits // 2
    return 180.0 / (1 << lat_bits), 360.0 / (1 << lon_bits)


def _wrap_lon(lon: float) -> float:
    return (lon + 180.0) % 360.0 - 180.0


@lru_cache(maxsize=200_000)
def _neighborhood(code: str) -> tuple[tuple[str, float, float], ...]:
    """The cell plus its adjacent cells as (code, center_lat, center_lon).

    Sorted by code.  Cells whose row would cross a pole are dropped, so the
    neighborhood can be smaller than nine near the poles.
    """
    cell = CellId(code)
    lat_lo, lat_hi, lon_lo, lon_hi = decode_bounds(cell)
    clat = (lat_lo + lat_hi) / 2.0
    clon = (lon_lo + lon_hi) / 2.0
    dlat, dlon = cell_spans(cell.precision)
    codes: set[str] = set()
    for row in (-1, 0, 1):
        lat = clat + row * dlat
        if not -90.0 <= lat <= 90.0:
            continue
        for col in (-1, 0, 1):
            lon = _wrap_lon(clon + col * dlon)
            codes.add(encode_cell(GeoPoint(lat, lon), cell.precision).code)
    out = []
    for c in sorted(codes):
        center = cell_center(CellId(c))
        out.append((c, center.lat, center.lon))
    return tuple(out)


def neighbor_cells(cell: CellId) -> tuple[CellId, ...]:
    """Adjacent cells of `cell` (excluding itself), sorted by code."""
    return tuple(CellId(c) for c, _, _ in _neighborhood(cell.code) if c != cell.code)


def factorize(point: GeoPoint, t: float, cfg: CodingConfig) -> WeightedFactorSet:
    """Code a continuous position and time into weighted factors.

    Spatial weights are proportional to 1 / (distance to cell center +
    epsilon) over the containing cell and its neighbors, normalized to sum
    to one; the temporal factor carries weight one; interaction factors
    mirror the spatial weights with the containing bucket attached.
    """
    entries: list[tuple[Factor, float]] = []
    spatial: list[tuple[str, float]] = []
    if cfg.use_spatial or cfg.use_interaction:
        cell = encode_cell(point, cfg.cell_precision)
        raw = []
        for code, center_lat, center_lon in _neighborhood(cell.code):
            d = haversine_m(point, GeoPoint(center_lat, center_lon))
            raw.append((code, 1.0 / (d + cfg.epsilon_m)))
        total = sum(w for _, w in raw)
        spatial = [(code, w / total) for code, w in raw]
    bucket = None
    if cfg.use_temporal or cfg.use_interaction:
        bucket = time_bucket(t, cfg.bucket_width_s).index
    if cfg.use_spatial:
        entries.extend((spatial_factor(code), w) for code, w in spatial)
    if cfg.use_temporal:
        entries.append((temporal_factor(bucket), 1.0))
    if cfg.use_interaction:
        entries.extend((interaction_factor(code, bucket), w) for code, w in spatial)
    return WeightedFactorSet(tuple(entries))


def cells_covering(
    min_lat: float, min_lon: float, max_lat: float, max_lon: float, precision: int
) -> list[CellId]:
    """All cells intersecting a bounding box, in south-to-north row-major order."""
    if not (min_lat < max_lat and min_lon < max_lon):
        raise InputError("bounding box must have min_lat < max_lat and min_lon < max_lon")
    GeoPoint(min_lat, min_lon)
    GeoPoint(max_lat, max_lon)
    dlat, dlon = cell_spans(precision)
    lat0_lo, _, lon0_lo, _ = decode_bounds(encode_cell(GeoPoint(min_lat, min_lon), precision))
    cells = []
    i = 0
    while True:
        lat = lat0_lo + (i + 0.5) * dlat
        if lat - dlat / 2.0 > max_lat or lat > 90.0:
            break
        j = 0
        while True:
            lon = lon0_lo + (j + 0.5) * dlon
            if lon - dlon / 2.0 > max_lon or lon > 180.0:
                break
            cells.append(encode_cell(GeoPoint(lat, min(lon, 180.0)), precision))
            j += 1
        i += 1
    return cells
