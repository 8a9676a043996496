"""Deterministic discrete-event ride marketplace simulation.

Requests and driver sessions are pre-generated from a seeded generator,
then a single event loop advances the market: requests wait, a fixed-width
matching cycle pairs them with idle drivers under either the
nearest-driver policy or the learned-value policy, matched trips run to
completion (or cancel before pickup), and completed and idle transitions
feed the value table when learning is on.  Identical seed and scenario
produce an identical event log, which is what makes switchback experiments
reproducible.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Callable, NamedTuple

import numpy as np

from .errors import InputError
from .matching import (
    POLICY_GREEDY,
    POLICY_RL,
    FilterConfig,
    build_edges,
    greedy_assignment,
    solve_assignment,
)
from .spacetime import (
    CellId,
    CodingConfig,
    GeoPoint,
    cells_covering,
    decode_bounds,
    factorize,
    haversine_m,
)
from .values import (
    TRANSITION_IDLE,
    TRANSITION_TRIP,
    LearnerConfig,
    Transition,
    ValueTable,
    evaluate,
    td_update,
)

STATUS_IDLE = "idle"
STATUS_ENROUTE = "enroute"
STATUS_ON_TRIP = "on_trip"
STATUS_OFFLINE = "offline"

# Same-timestamp ordering: completions free drivers before the cycle that
# could re-match them, and arrivals join the batch of the cycle at their
# own timestamp.
_EVENT_PRIORITY = {
    "trip_complete": 0,
    "pickup_complete": 1,
    "rider_cancel": 2,
    "request_expired": 3,
    "driver_logoff": 4,
    "driver_login": 5,
    "request_arrival": 6,
    "cycle_tick": 7,
}


def travel_time(a: GeoPoint, b: GeoPoint, speed_mps: float) -> int:
    """Straight-line travel time in whole seconds, rounded up.

    The small slack before rounding keeps representable distances such as
    1800 m at 10 m/s from landing on 181 s through float noise.
    """
    if not math.isfinite(speed_mps) or speed_mps <= 0:
        raise InputError(f"speed_mps must be > 0, got {speed_mps!r}")
    d = haversine_m(a, b)
    if d <= 0.0:
        return 0
    return int(math.ceil(d / speed_mps - 1e-9))


@dataclass(frozen=True)
class BoundingBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def validate(self) -> list[tuple[str, str]]:
        problems = []
        for name in ("min_lat", "min_lon", "max_lat", "max_lon"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                problems.append((name, f"must be finite, got {v!r}"))
        if problems:
            return problems
        if not -90.0 <= self.min_lat < self.max_lat <= 90.0:
            problems.append(("min_lat", "requires -90 <= min_lat < max_lat <= 90"))
        if not -180.0 <= self.min_lon < self.max_lon <= 180.0:
            problems.append(("min_lon", "requires -180 <= min_lon < max_lon <= 180"))
        return problems


@dataclass(frozen=True)
class FareParams:
    """Fare = base + per_km * distance + per_min * trip time."""

    base: float = 2.0
    per_km: float = 1.0
    per_min: float = 0.2

    def validate(self) -> list[tuple[str, str]]:
        problems = []
        for name in ("base", "per_km", "per_min"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                problems.append((name, f"must be finite and >= 0, got {v!r}"))
        return problems


@dataclass(frozen=True)
class CellWeight:
    cell: str
    weight: float


@dataclass(frozen=True)
class DemandModel:
    """Piecewise-constant request intensity per cell per hour-of-week.

    With no explicit origin cells, origins are uniform over the region;
    destinations work the same way.  `hour_profile` multiplies the base
    rate and may have length 1 (flat), 24 (daily), or 168 (weekly).
    """

    base_per_hour: float = 30.0
    hour_profile: tuple[float, ...] = (1.0,)
    origin_cells: tuple[CellWeight, ...] = ()
    dest_cells: tuple[CellWeight, ...] = ()
    cell_precision: int = 6

    def validate(self) -> list[tuple[str, str]]:
        problems = []
        if not math.isfinite(self.base_per_hour) or self.base_per_hour < 0:
            problems.append(("base_per_hour", f"must be >= 0, got {self.base_per_hour!r}"))
        problems.extend(_check_profile("hour_profile", self.hour_profile))
        for label, cells in (("origin_cells", self.origin_cells), ("dest_cells", self.dest_cells)):
            for i, cw in enumerate(cells):
                if not math.isfinite(cw.weight) or cw.weight <= 0:
                    problems.append((f"{label}[{i}].weight", f"must be > 0, got {cw.weight!r}"))
        if not isinstance(self.cell_precision, int) or not 1 <= self.cell_precision <= 12:
            problems.append(("cell_precision", f"must be an int in [1, 12], got {self.cell_precision!r}"))
        return problems


@dataclass(frozen=True)
class SupplyModel:
    """Driver login process: an initial fleet plus a Poisson login stream."""

    initial_drivers: int = 10
    logins_per_hour: float = 2.0
    hour_profile: tuple[float, ...] = (1.0,)
    session_mean_s: float = 14400.0
    session_min_s: float = 600.0

    def validate(self) -> list[tuple[str, str]]:
        problems = []
        if not isinstance(self.initial_drivers, int) or self.initial_drivers < 0:
            problems.append(("initial_drivers", f"must be an int >= 0, got {self.initial_drivers!r}"))
        if not math.isfinite(self.logins_per_hour) or self.logins_per_hour < 0:
            problems.append(("logins_per_hour", f"must be >= 0, got {self.logins_per_hour!r}"))
        problems.extend(_check_profile("hour_profile", self.hour_profile))
        if not math.isfinite(self.session_mean_s) or self.session_mean_s <= 0:
            problems.append(("session_mean_s", f"must be > 0, got {self.session_mean_s!r}"))
        if not math.isfinite(self.session_min_s) or self.session_min_s <= 0:
            problems.append(("session_min_s", f"must be > 0, got {self.session_min_s!r}"))
        return problems


def _check_profile(name: str, profile: tuple[float, ...]) -> list[tuple[str, str]]:
    if len(profile) not in (1, 24, 168):
        return [(name, f"length must be 1, 24, or 168, got {len(profile)}")]
    bad = [v for v in profile if not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0]
    if bad:
        return [(name, f"entries must be finite and >= 0, got {bad[0]!r}")]
    return []


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that defines one simulated market."""

    bbox: BoundingBox
    region_id: str = "region-1"
    horizon_s: float = 86400.0
    cycle_s: float = 4.0
    speed_mps: float = 8.33
    rng_seed: int = 0
    patience_s: float = 300.0
    cancel_prob: float = 0.05
    cancel_prob_per_pickup_s: float = 0.0
    cancel_prob_max: float = 0.9
    fare: FareParams = field(default_factory=FareParams)
    demand: DemandModel = field(default_factory=DemandModel)
    supply: SupplyModel = field(default_factory=SupplyModel)

    def validate(self) -> list[tuple[str, str]]:
        problems = [(f"bbox.{f}", m) for f, m in self.bbox.validate()]
        if not self.region_id:
            problems.append(("region_id", "must be non-empty"))
        if not math.isfinite(self.horizon_s) or self.horizon_s <= 0:
            problems.append(("horizon_s", f"must be > 0, got {self.horizon_s!r}"))
        if not math.isfinite(self.cycle_s) or self.cycle_s <= 0:
            problems.append(("cycle_s", f"must be > 0, got {self.cycle_s!r}"))
        if not math.isfinite(self.speed_mps) or self.speed_mps <= 0:
            problems.append(("speed_mps", f"must be > 0, got {self.speed_mps!r}"))
        if not isinstance(self.rng_seed, int) or not 0 <= self.rng_seed < 2**64:
            problems.append(("rng_seed", f"must be an int in [0, 2**64), got {self.rng_seed!r}"))
        if not math.isfinite(self.patience_s) or self.patience_s <= 0:
            problems.append(("patience_s", f"must be > 0, got {self.patience_s!r}"))
        if not math.isfinite(self.cancel_prob) or not 0.0 <= self.cancel_prob <= 1.0:
            problems.append(("cancel_prob", f"must be in [0, 1], got {self.cancel_prob!r}"))
        if not math.isfinite(self.cancel_prob_per_pickup_s) or self.cancel_prob_per_pickup_s < 0:
            problems.append(
                ("cancel_prob_per_pickup_s", f"must be >= 0, got {self.cancel_prob_per_pickup_s!r}")
            )
        if not math.isfinite(self.cancel_prob_max) or not 0.0 <= self.cancel_prob_max <= 1.0:
            problems.append(("cancel_prob_max", f"must be in [0, 1], got {self.cancel_prob_max!r}"))
        problems.extend((f"fare.{f}", m) for f, m in self.fare.validate())
        problems.extend((f"demand.{f}", m) for f, m in self.demand.validate())
        problems.extend((f"supply.{f}", m) for f, m in self.supply.validate())
        return problems

    def effective_cancel_prob(self, request: "RideRequest", pickup_s: float) -> float:
        """Pre-pickup cancellation probability of a prospective match."""
        p = request.cancel_prob + self.cancel_prob_per_pickup_s * pickup_s
        return min(self.cancel_prob_max, p)


@dataclass(frozen=True)
class RideRequest:
    """A rider asking to go from origin to destination."""

    rider_id: int
    origin: GeoPoint
    destination: GeoPoint
    request_time: float
    fare: float
    patience_s: float
    cancel_prob: float

    def __post_init__(self) -> None:
        if self.origin == self.destination:
            raise InputError(f"request {self.rider_id}: origin equals destination")
        if not math.isfinite(self.fare) or self.fare < 0:
            raise InputError(f"request {self.rider_id}: fare must be >= 0, got {self.fare!r}")
        if not math.isfinite(self.patience_s) or self.patience_s <= 0:
            raise InputError(f"request {self.rider_id}: patience_s must be > 0")
        if not math.isfinite(self.cancel_prob) or not 0.0 <= self.cancel_prob <= 1.0:
            raise InputError(f"request {self.rider_id}: cancel_prob must be in [0, 1]")


@dataclass
class DriverState:
    """One driver's live state inside the simulation."""

    driver_id: int
    position: GeoPoint
    status: str = STATUS_IDLE
    status_until: float = math.inf
    session_end: float = math.inf
    match_token: int = 0


@dataclass(frozen=True)
class MarketEvent:
    """One logged marketplace event (a row of the event log)."""

    time: float
    kind: str
    rider_id: int | None = None
    driver_id: int | None = None
    pickup_s: int | None = None
    trip_s: int | None = None
    wait_s: float | None = None
    fare: float | None = None


class StatusInterval(NamedTuple):
    """A maximal span during which a driver held one status."""

    driver_id: int
    start: float
    end: float
    status: str


@dataclass
class MetricsLog:
    """Everything observed during one run, enough to recompute any metric."""

    region_id: str
    seed: int
    horizon_s: float
    events: list[MarketEvent] = field(default_factory=list)
    intervals: list[StatusInterval] = field(default_factory=list)


class _WeightedRects:
    """Sample a point from weighted rectangles (or a single fallback box)."""

    def __init__(self, cells: tuple[CellWeight, ...], bbox: BoundingBox):
        self.bbox = bbox
        self.rects: list[tuple[float, float, float, float]] = []
        self.cum: list[float] = []
        total = 0.0
        for cw in cells:
            lat_lo, lat_hi, lon_lo, lon_hi = decode_bounds(CellId(cw.cell))
            self.rects.append((lat_lo, lat_hi, lon_lo, lon_hi))
            total += cw.weight
            self.cum.append(total)

    def draw(self, rng: np.random.Generator) -> GeoPoint:
        if not self.rects:
            lat = self.bbox.min_lat + rng.random() * (self.bbox.max_lat - self.bbox.min_lat)
            lon = self.bbox.min_lon + rng.random() * (self.bbox.max_lon - self.bbox.min_lon)
            return GeoPoint(lat, lon)
        u = rng.random() * self.cum[-1]
        idx = min(bisect_right(self.cum, u), len(self.rects) - 1)
        lat_lo, lat_hi, lon_lo, lon_hi = self.rects[idx]
        lat = lat_lo + rng.random() * (lat_hi - lat_lo)
        lon = lon_lo + rng.random() * (lon_hi - lon_lo)
        return GeoPoint(lat, lon)


def _profile_rate(base: float, profile: tuple[float, ...], hour: int) -> float:
    if len(profile) == 1:
        return base * profile[0]
    if len(profile) == 24:
        return base * profile[hour % 24]
    return base * profile[hour % 168]


def _generate_demand(scn: ScenarioConfig, rng: np.random.Generator) -> list[RideRequest]:
    origins = _WeightedRects(scn.demand.origin_cells, scn.bbox)
    dests = _WeightedRects(scn.demand.dest_cells, scn.bbox)
    n_hours = int(math.ceil(scn.horizon_s / 3600.0))
    raw: list[tuple[float, GeoPoint, GeoPoint]] = []
    for hour in range(n_hours):
        lam = _profile_rate(scn.demand.base_per_hour, scn.demand.hour_profile, hour)
        if lam <= 0:
            continue
        count = int(rng.poisson(lam))
        for _ in range(count):
            t = hour * 3600.0 + rng.random() * 3600.0
            if t >= scn.horizon_s:
                continue
            origin = origins.draw(rng)
            dest = dests.draw(rng)
            while dest == origin:
                dest = dests.draw(rng)
            raw.append((t, origin, dest))
    raw.sort(key=lambda item: item[0])
    requests = []
    for rider_id, (t, origin, dest) in enumerate(raw, start=1):
        trip_s = travel_time(origin, dest, scn.speed_mps)
        fare = (
            scn.fare.base
            + scn.fare.per_km * haversine_m(origin, dest) / 1000.0
            + scn.fare.per_min * trip_s / 60.0
        )
        requests.append(
            RideRequest(
                rider_id=rider_id,
                origin=origin,
                destination=dest,
                request_time=t,
                fare=fare,
                patience_s=scn.patience_s,
                cancel_prob=scn.cancel_prob,
            )
        )
    return requests


def _generate_supply(scn: ScenarioConfig, rng: np.random.Generator) -> list[tuple[float, GeoPoint, float]]:
    """Login times, positions, and session lengths, sorted by login time."""
    box = _WeightedRects((), scn.bbox)
    logins: list[tuple[float, GeoPoint, float]] = []
    for _ in range(scn.supply.initial_drivers):
        pos = box.draw(rng)
        session = max(scn.supply.session_min_s, float(rng.exponential(scn.supply.session_mean_s)))
        logins.append((0.0, pos, session))
    n_hours = int(math.ceil(scn.horizon_s / 3600.0))
    for hour in range(n_hours):
        lam = _profile_rate(scn.supply.logins_per_hour, scn.supply.hour_profile, hour)
        if lam <= 0:
            continue
        count = int(rng.poisson(lam))
        for _ in range(count):
            t = hour * 3600.0 + rng.random() * 3600.0
            if t >= scn.horizon_s:
                continue
            pos = box.draw(rng)
            session = max(scn.supply.session_min_s, float(rng.exponential(scn.supply.session_mean_s)))
            logins.append((t, pos, session))
    logins.sort(key=lambda item: item[0])
    return logins


@dataclass
class _PendingTrip:
    rider_id: int
    token: int
    match_time: float
    pickup_s: int
    trip_s: int
    origin: GeoPoint
    destination: GeoPoint
    position_at_match: GeoPoint
    fare: float
    transition: Transition


class _Sim:
    def __init__(
        self,
        scn: ScenarioConfig,
        policy_fn: Callable[[float], str],
        learn_fn: Callable[[float], bool],
        table: ValueTable,
        coding: CodingConfig,
        learner: LearnerConfig,
        filter_cfg: FilterConfig,
        rng: np.random.Generator,
    ):
        self.scn = scn
        self.policy_fn = policy_fn
        self.learn_fn = learn_fn
        self.table = table
        self.coding = coding
        self.learner = learner
        self.filter_cfg = filter_cfg
        self.rng = rng
        self.now = 0.0
        self.heap: list = []
        self.seq = 0
        self.waiting: dict[int, RideRequest] = {}
        self.drivers: dict[int, DriverState] = {}
        self.pending: dict[int, _PendingTrip] = {}
        self.log = MetricsLog(region_id=scn.region_id, seed=scn.rng_seed, horizon_s=scn.horizon_s)
        self._open_interval: dict[int, tuple[float, str]] = {}

    # -- plumbing ---------------------------------------------------------

    def push(self, time: float, kind: str, entity_id: int, payload=None) -> None:
        self.seq += 1
        heappush(self.heap, (time, _EVENT_PRIORITY[kind], entity_id, self.seq, kind, payload))

    def emit(self, kind: str, **fields) -> None:
        self.log.events.append(MarketEvent(time=self.now, kind=kind, **fields))

    def set_status(self, drv: DriverState, status: str, until: float = math.inf) -> None:
        start, current = self._open_interval.pop(drv.driver_id, (None, None))
        if current is not None and start < self.now:
            self.log.intervals.append(StatusInterval(drv.driver_id, start, self.now, current))
        drv.status = status
        drv.status_until = until
        if status != STATUS_OFFLINE:
            self._open_interval[drv.driver_id] = (self.now, status)

    def travel(self, a: GeoPoint, b: GeoPoint) -> int:
        return travel_time(a, b, self.scn.speed_mps)

    # -- handlers ---------------------------------------------------------

    def on_driver_login(self, driver_id: int, payload) -> None:
        position, session_s = payload
        session_end = self.now + session_s
        drv = DriverState(driver_id=driver_id, position=position, session_end=session_end)
        self.drivers[driver_id] = drv
        self.set_status(drv, STATUS_IDLE)
        self.emit("driver_login", driver_id=driver_id)
        self.push(session_end, "driver_logoff", driver_id)

    def on_driver_logoff(self, driver_id: int, payload) -> None:
        drv = self.drivers.get(driver_id)
        if drv is None or drv.status != STATUS_IDLE:
            return  # busy drivers log off when their trip resolves
        self.set_status(drv, STATUS_OFFLINE)
        self.emit("driver_logoff", driver_id=driver_id)
        del self.drivers[driver_id]

    def maybe_logoff(self, drv: DriverState) -> bool:
        if self.now >= drv.session_end:
            self.set_status(drv, STATUS_OFFLINE)
            self.emit("driver_logoff", driver_id=drv.driver_id)
            del self.drivers[drv.driver_id]
            return True
        return False

    def on_request_arrival(self, rider_id: int, payload) -> None:
        req: RideRequest = payload
        self.waiting[rider_id] = req
        self.emit("request_arrival", rider_id=rider_id)
        self.push(req.request_time + req.patience_s, "request_expired", rider_id)

    def on_request_expired(self, rider_id: int, payload) -> None:
        req = self.waiting.pop(rider_id, None)
        if req is None:
            return
        self.emit("request_expired", rider_id=rider_id, wait_s=self.now - req.request_time)

    def on_cycle_tick(self, _entity: int, payload) -> None:
        learn_now = self.learn_fn(self.now)
        if self.waiting:
            idle = sorted(
                (d for d in self.drivers.values() if d.status == STATUS_IDLE),
                key=lambda d: d.driver_id,
            )
            if idle:
                policy = self.policy_fn(self.now)
                edges = build_edges(
                    list(self.waiting.values()),
                    idle,
                    policy,
                    self.table,
                    self.filter_cfg,
                    self.coding,
                    self.learner,
                    self.travel,
                    self.now,
                    cancel_prob_fn=self.scn.effective_cancel_prob,
                )
                if edges:
                    if policy == POLICY_RL:
                        plan = solve_assignment(edges)
                    else:
                        plan = greedy_assignment(edges)
                    pickup_of = {(e.rider_id, e.driver_id): int(e.pickup_s) for e in edges}
                    for rider_id, driver_id in plan.pairs:
                        self.start_match(
                            self.waiting.pop(rider_id),
                            self.drivers[driver_id],
                            pickup_of[(rider_id, driver_id)],
                        )
        if learn_now:
            for drv in sorted(self.drivers.values(), key=lambda d: d.driver_id):
                if drv.status == STATUS_IDLE:
                    self.idle_update(drv)
        next_tick = self.now + self.scn.cycle_s
        if next_tick <= self.scn.horizon_s:
            self.push(next_tick, "cycle_tick", 0)

    def start_match(self, req: RideRequest, drv: DriverState, pickup_s: int) -> None:
        now = self.now
        trip_s = self.travel(req.origin, req.destination)
        duration = float(pickup_s + trip_s)
        transition = Transition(
            from_state=factorize(drv.position, now, self.coding),
            to_state=factorize(req.destination, now + duration, self.coding),
            reward=req.fare,
            duration_s=duration,
            cancel_prob=self.scn.effective_cancel_prob(req, pickup_s),
            kind=TRANSITION_TRIP,
        )
        drv.match_token += 1
        pending = _PendingTrip(
            rider_id=req.rider_id,
            token=drv.match_token,
            match_time=now,
            pickup_s=pickup_s,
            trip_s=trip_s,
            origin=req.origin,
            destination=req.destination,
            position_at_match=drv.position,
            fare=req.fare,
            transition=transition,
        )
        self.pending[drv.driver_id] = pending
        self.set_status(drv, STATUS_ENROUTE, until=now + pickup_s)
        self.emit(
            "match_made",
            rider_id=req.rider_id,
            driver_id=drv.driver_id,
            pickup_s=pickup_s,
            trip_s=trip_s,
            wait_s=now - req.request_time,
            fare=req.fare,
        )
        cancel_p = self.scn.effective_cancel_prob(req, pickup_s)
        will_cancel = self.rng.random() < cancel_p and pickup_s > 0
        if will_cancel:
            cancel_at = now + self.rng.random() * pickup_s
            self.push(cancel_at, "rider_cancel", drv.driver_id, pending)
        else:
            self.push(now + pickup_s, "pickup_complete", drv.driver_id, pending)
            self.push(now + pickup_s + trip_s, "trip_complete", drv.driver_id, pending)

    def on_rider_cancel(self, driver_id: int, pending: _PendingTrip) -> None:
        drv = self.drivers.get(driver_id)
        if drv is None or drv.match_token != pending.token or drv.status != STATUS_ENROUTE:
            return
        drv.match_token += 1  # invalidate any scheduled pickup/trip events
        self.pending.pop(driver_id, None)
        frac = 0.0
        if pending.pickup_s > 0:
            frac = (self.now - pending.match_time) / pending.pickup_s
        a, b = pending.position_at_match, pending.origin
        drv.position = GeoPoint(a.lat + frac * (b.lat - a.lat), a.lon + frac * (b.lon - a.lon))
        self.emit("rider_cancel", rider_id=pending.rider_id, driver_id=driver_id,
                  wait_s=self.now - pending.match_time)
        if not self.maybe_logoff(drv):
            self.set_status(drv, STATUS_IDLE)

    def on_pickup_complete(self, driver_id: int, pending: _PendingTrip) -> None:
        drv = self.drivers.get(driver_id)
        if drv is None or drv.match_token != pending.token:
            return
        drv.position = pending.origin
        self.set_status(drv, STATUS_ON_TRIP, until=pending.match_time + pending.pickup_s + pending.trip_s)
        self.emit("pickup_complete", rider_id=pending.rider_id, driver_id=driver_id,
                  pickup_s=pending.pickup_s)

    def on_trip_complete(self, driver_id: int, pending: _PendingTrip) -> None:
        drv = self.drivers.get(driver_id)
        if drv is None or drv.match_token != pending.token:
            return
        self.pending.pop(driver_id, None)
        drv.position = pending.destination
        self.emit(
            "trip_complete",
            rider_id=pending.rider_id,
            driver_id=driver_id,
            pickup_s=pending.pickup_s,
            trip_s=pending.trip_s,
            fare=pending.fare,
        )
        if self.learn_fn(self.now):
            td_update(self.table, pending.transition, self.learner)
        if not self.maybe_logoff(drv):
            self.set_status(drv, STATUS_IDLE)

    def idle_update(self, drv: DriverState) -> None:
        idle_s = self.learner.idle_duration_s
        tr = Transition(
            from_state=factorize(drv.position, self.now, self.coding),
            to_state=factorize(drv.position, self.now + idle_s, self.coding),
            reward=0.0,
            duration_s=idle_s,
            cancel_prob=0.0,
            kind=TRANSITION_IDLE,
        )
        td_update(self.table, tr, self.learner)

    # -- main loop --------------------------------------------------------

    _HANDLERS = {
        "driver_login": on_driver_login,
        "driver_logoff": on_driver_logoff,
        "request_arrival": on_request_arrival,
        "request_expired": on_request_expired,
        "cycle_tick": on_cycle_tick,
        "rider_cancel": on_rider_cancel,
        "pickup_complete": on_pickup_complete,
        "trip_complete": on_trip_complete,
    }

    def run(self) -> MetricsLog:
        horizon = self.scn.horizon_s
        heap = self.heap
        while heap:
            time, _, entity_id, _, kind, payload = heappop(heap)
            if time > horizon:
                break
            if time < self.now:
                raise AssertionError("event clock moved backwards")
            self.now = time
            self._HANDLERS[kind](self, entity_id, payload)
        self.now = horizon
        for rider_id in list(self.waiting):
            req = self.waiting.pop(rider_id)
            self.emit("request_expired", rider_id=rider_id, wait_s=horizon - req.request_time)
        for driver_id in sorted(self._open_interval):
            start, status = self._open_interval[driver_id]
            if start < horizon:
                self.log.intervals.append(StatusInterval(driver_id, start, horizon, status))
        self._open_interval.clear()
        return self.log


def run(
    scenario: ScenarioConfig,
    policy: str | Callable[[float], str],
    table: ValueTable | None = None,
    learn: bool | Callable[[float], bool] = False,
    *,
    coding: CodingConfig | None = None,
    learner: LearnerConfig | None = None,
    filter_cfg: FilterConfig | None = None,
) -> tuple[MetricsLog, ValueTable]:
    """Run one simulated market and return its event log and value table.

    `policy` and `learn` may be per-timestamp callables, which is how
    switchback experiments flip arms mid-run.  The scenario seed drives
    every stochastic draw, so a repeated call is event-for-event identical.
    """
    coding = coding if coding is not None else CodingConfig()
    learner = learner if learner is not None else LearnerConfig()
    filter_cfg = filter_cfg if filter_cfg is not None else FilterConfig()
    problems = (
        [(f"scenario.{f}", m) for f, m in scenario.validate()]
        + [(f"coding.{f}", m) for f, m in coding.validate()]
        + [(f"learner.{f}", m) for f, m in learner.validate()]
        + [(f"filter.{f}", m) for f, m in filter_cfg.validate()]
    )
    if problems:
        raise InputError("; ".join(f"{f}: {m}" for f, m in problems))
    if isinstance(policy, str):
        if policy not in (POLICY_GREEDY, POLICY_RL):
            raise InputError(f"policy must be 'greedy' or 'rl', got {policy!r}")
        fixed_policy = policy
        policy_fn = lambda t: fixed_policy  # noqa: E731
    else:
        policy_fn = policy
    if isinstance(learn, bool):
        fixed_learn = learn
        learn_fn = lambda t: fixed_learn  # noqa: E731
    else:
        learn_fn = learn
    table = table if table is not None else ValueTable(default_value=learner.default_value)

    rng = np.random.Generator(np.random.PCG64(scenario.rng_seed))
    requests = _generate_demand(scenario, rng)
    logins = _generate_supply(scenario, rng)

    sim = _Sim(scenario, policy_fn, learn_fn, table, coding, learner, filter_cfg, rng)
    for req in requests:
        sim.push(req.request_time, "request_arrival", req.rider_id, req)
    for i, (t, pos, session_s) in enumerate(logins, start=1):
        sim.push(t, "driver_login", i, (pos, session_s))
    first_tick = min(scenario.cycle_s, scenario.horizon_s)
    sim.push(first_tick, "cycle_tick", 0)
    log = sim.run()
    return log, table


def export_heatmap(
    table: ValueTable, t: float, bbox: BoundingBox, coding: CodingConfig
) -> list[tuple[str, float, float, float]]:
    """Evaluate V at every cell center covering the box at time t.

    Returns (cell_code, center_lat, center_lon, value) rows sorted by cell
    code, suitable for direct serialization.
    """
    problems = bbox.validate() + coding.validate()
    if problems:
        raise InputError("; ".join(f"{f}: {m}" for f, m in problems))
    rows = []
    for cell in cells_covering(bbox.min_lat, bbox.min_lon, bbox.max_lat, bbox.max_lon, coding.cell_precision):
        lat_lo, lat_hi, lon_lo, lon_hi = decode_bounds(cell)
        center = GeoPoint((lat_lo + lat_hi) / 2.0, (lon_lo + lon_hi) / 2.0)
        value = evaluate(table, factorize(center, t, coding))
        rows.append((cell.code, center.lat, center.lon, value))
    rows.sort(key=lambda r: r[0])
    return rows


def events_tsv(log: MetricsLog) -> str:
    """Render the event log as tab-separated text with a seed header."""
    lines = [
        f"# seed={log.seed}",
        f"# region={log.region_id}",
        f"# horizon_s={_fmt(log.horizon_s)}",
        "time\tkind\trider_id\tdriver_id\tpickup_s\ttrip_s\twait_s\tfare",
    ]
    for e in log.events:
        lines.append(
            "\t".join(
                (
                    _fmt(e.time),
                    e.kind,
                    _fmt(e.rider_id),
                    _fmt(e.driver_id),
                    _fmt(e.pickup_s),
                    _fmt(e.trip_s),
                    _fmt(e.wait_s),
                    _fmt(e.fare),
                )
            )
        )
    return "\n".join(lines) + "\n"


def hourly_tsv(log: MetricsLog) -> str:
    """Per-hour aggregates: demand, outcomes, pickup times, idle share, fares."""
    n_hours = int(math.ceil(log.horizon_s / 3600.0))
    requests = [0] * n_hours
    matches = [0] * n_hours
    expired = [0] * n_hours
    cancelled = [0] * n_hours
    completed = [0] * n_hours
    pickup_sum = [0.0] * n_hours
    fares = [0.0] * n_hours
    online = [0.0] * n_hours
    idle = [0.0] * n_hours
    for e in log.events:
        if e.time >= log.horizon_s:
            hour = n_hours - 1
        else:
            hour = int(e.time // 3600.0)
        if e.kind == "request_arrival":
            requests[hour] += 1
        elif e.kind == "match_made":
            matches[hour] += 1
            pickup_sum[hour] += e.pickup_s
        elif e.kind == "request_expired":
            expired[hour] += 1
        elif e.kind == "rider_cancel":
            cancelled[hour] += 1
        elif e.kind == "trip_complete":
            completed[hour] += 1
            fares[hour] += e.fare
    for driver_id, start, end, status in log.intervals:
        first = int(start // 3600.0)
        last = min(n_hours - 1, int(math.ceil(end / 3600.0)) - 1)
        for hour in range(first, last + 1):
            lo = max(start, hour * 3600.0)
            hi = min(end, (hour + 1) * 3600.0)
            if hi <= lo:
                continue
            online[hour] += hi - lo
            if status == STATUS_IDLE:
                idle[hour] += hi - lo
    lines = [
        f"# seed={log.seed}",
        f"# region={log.region_id}",
        "hour\trequests\tmatches\texpired\tcancelled\tcompleted\tmean_pickup_s\tidle_fraction\tgross_fares",
    ]
    for h in range(n_hours):
        mean_pickup = _fmt(pickup_sum[h] / matches[h]) if matches[h] else ""
        idle_frac = _fmt(idle[h] / online[h]) if online[h] > 0 else ""
        lines.append(
            "\t".join(
                (
                    str(h),
                    str(requests[h]),
                    str(matches[h]),
                    str(expired[h]),
                    str(cancelled[h]),
                    str(completed[h]),
                    mean_pickup,
                    idle_frac,
                    _fmt(fares[h]),
                )
            )
        )
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return f"{value:.6f}"
