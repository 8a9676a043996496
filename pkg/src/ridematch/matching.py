"""Per-cycle rider-driver assignment.

Candidate edges pair waiting riders with idle drivers, filtered on pickup
time and per-rider candidate count, and weighted either by negative pickup
seconds (the nearest-driver baseline) or by the estimated long-run dollar
gain of the trip.  `solve_assignment` finds a maximum-cardinality matching
of maximum total weight via the classic potentials/augmenting-path method
on a padded square cost matrix; `greedy_assignment` is the sequential
nearest-driver baseline the optimal matcher is compared against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

from .errors import InputError
from .spacetime import CodingConfig, GeoPoint, factorize
from .values import LearnerConfig, ValueTable, advantage

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .marketplace import DriverState, RideRequest

POLICY_GREEDY = "greedy"
POLICY_RL = "rl"


@dataclass(frozen=True)
class CandidateEdge:
    """A feasible rider-driver pairing with its matching weight."""

    rider_id: str | int
    driver_id: str | int
    weight: float
    pickup_s: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.weight):
            raise InputError(f"edge weight must be finite, got {self.weight!r}")
        if not math.isfinite(self.pickup_s) or self.pickup_s < 0:
            raise InputError(f"pickup_s must be finite and >= 0, got {self.pickup_s!r}")


@dataclass(frozen=True)
class FilterConfig:
    """Feasibility filters applied while building candidate edges."""

    max_pickup_s: float = 900.0
    max_candidates_per_rider: int = 15

    def validate(self) -> list[tuple[str, str]]:
        problems = []
        if not math.isfinite(self.max_pickup_s) or self.max_pickup_s <= 0:
            problems.append(("max_pickup_s", f"must be > 0, got {self.max_pickup_s!r}"))
        if not isinstance(self.max_candidates_per_rider, int) or self.max_candidates_per_rider < 1:
            problems.append(
                ("max_candidates_per_rider", f"must be an int >= 1, got {self.max_candidates_per_rider!r}")
            )
        return problems


@dataclass(frozen=True)
class MatchPlan:
    """The outcome of one matching cycle.

    Pairs are sorted by (rider_id, driver_id); the objective is the sum of
    the selected edge weights.
    """

    pairs: tuple[tuple[str | int, str | int], ...]
    unmatched_riders: frozenset
    unmatched_drivers: frozenset
    objective: float


def _check_edges(edges: Sequence[CandidateEdge]) -> None:
    seen = set()
    for e in edges:
        key = (e.rider_id, e.driver_id)
        if key in seen:
            raise InputError(f"duplicate edge for rider {e.rider_id!r} and driver {e.driver_id!r}")
        seen.add(key)


def _finalize(
    edges: Sequence[CandidateEdge],
    chosen: Iterable[tuple[str | int, str | int]],
    weight_of: dict,
) -> MatchPlan:
    pairs = tuple(sorted(chosen))
    matched_riders = {r for r, _ in pairs}
    matched_drivers = {d for _, d in pairs}
    riders = {e.rider_id for e in edges}
    drivers = {e.driver_id for e in edges}
    objective = sum(weight_of[p] for p in pairs)
    return MatchPlan(
        pairs=pairs,
        unmatched_riders=frozenset(riders - matched_riders),
        unmatched_drivers=frozenset(drivers - matched_drivers),
        objective=objective,
    )


def _min_cost_square(cost: list[list[float]]) -> list[int]:
    """Minimum-cost perfect matching on a square matrix.

    Standard O(n^3) potentials method with shortest augmenting paths; rows
    are introduced one at a time.  Returns the row assigned to each column
    (0-based).
    """
    n = len(cost)
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match_row = [0] * (n + 1)  # 1-based: column j -> assigned row
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match_row[0] = i
        j0 = 0
        minv = [math.inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match_row[j0]
            delta = math.inf
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_row[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_row[j0] = match_row[j1]
            j0 = j1
    return [match_row[j] - 1 for j in range(1, n + 1)]


def solve_assignment(
    edges: Sequence[CandidateEdge], admit_threshold: float | None = None
) -> MatchPlan:
    """Match as many riders as possible, maximizing total edge weight.

    Cardinality takes priority over weight: a rider is never left waiting
    just because every reachable driver has a negative weight.  Edges with
    weight below `admit_threshold` (when given) are excluded up front.
    Ties between equal-weight matchings are broken deterministically by
    processing riders and drivers in ascending id order.
    """
    edges = list(edges)
    _check_edges(edges)
    if admit_threshold is None:
        admitted = edges
    else:
        admitted = [e for e in edges if e.weight >= admit_threshold]
    if not admitted:
        return _finalize(edges, (), {})
    riders = sorted({e.rider_id for e in admitted})
    drivers = sorted({e.driver_id for e in admitted})
    rider_index = {r: i for i, r in enumerate(riders)}
    driver_index = {d: j for j, d in enumerate(drivers)}
    weight_of = {(e.rider_id, e.driver_id): e.weight for e in admitted}

    n, m = len(riders), len(drivers)
    size = n + m
    total_abs = sum(abs(w) for w in weight_of.values())
    shift = 1.0 + 2.0 * total_abs  # makes higher cardinality always win
    big = (shift + total_abs + 1.0) * (size + 1)  # forbidden-pair sentinel

    cost = [[big] * size for _ in range(size)]
    for e in admitted:
        cost[rider_index[e.rider_id]][driver_index[e.driver_id]] = -(e.weight + shift)
    for i in range(n):
        cost[i][m + i] = 0.0  # rider i left unmatched
    for j in range(m):
        cost[n + j][j] = 0.0  # driver j left unmatched
    for i in range(n, size):
        for j in range(m, size):
            cost[i][j] = 0.0  # dummy-dummy filler

    row_of_col = _min_cost_square(cost)
    chosen = []
    for j in range(m):
        i = row_of_col[j]
        if i < n:
            pair = (riders[i], drivers[j])
            assert pair in weight_of, "optimal matching selected a forbidden pair"
            chosen.append(pair)
    return _finalize(edges, chosen, weight_of)


def greedy_assignment(edges: Sequence[CandidateEdge]) -> MatchPlan:
    """Sequential nearest-driver baseline.

    Riders are processed in their order of first appearance in the edge
    list (arrival order, when the edges come from `build_edges`); each
    takes its closest remaining driver, ties to the lower driver id.
    """
    edges = list(edges)
    _check_edges(edges)
    rider_order: list = []
    by_rider: dict = {}
    for e in edges:
        if e.rider_id not in by_rider:
            rider_order.append(e.rider_id)
            by_rider[e.rider_id] = []
        by_rider[e.rider_id].append(e)
    weight_of = {(e.rider_id, e.driver_id): e.weight for e in edges}
    taken = set()
    chosen = []
    for rider in rider_order:
        best = None
        for e in by_rider[rider]:
            if e.driver_id in taken:
                continue
            if best is None or (e.pickup_s, e.driver_id) < (best.pickup_s, best.driver_id):
                best = e
        if best is not None:
            taken.add(best.driver_id)
            chosen.append((rider, best.driver_id))
    return _finalize(edges, chosen, weight_of)


def build_edges(
    requests: Sequence["RideRequest"],
    drivers: Sequence["DriverState"],
    policy: str,
    table: ValueTable,
    filter_cfg: FilterConfig,
    coding: CodingConfig,
    learner: LearnerConfig,
    travel_time_fn: Callable[[GeoPoint, GeoPoint], int],
    now: float,
    cancel_prob_fn: Callable[["RideRequest", int], float] | None = None,
) -> list[CandidateEdge]:
    """Feasible weighted edges between waiting riders and idle drivers.

    Pickup times beyond `max_pickup_s` are dropped and only the
    `max_candidates_per_rider` nearest drivers are kept per rider.  Under
    the greedy policy the weight is negative pickup seconds; under the RL
    policy it is the advantage of the trip for that driver, evaluated
    against the current value table.  `cancel_prob_fn` supplies the
    cancellation probability of a prospective match given its pickup time;
    by default the request's own `cancel_prob` is used as is.
    """
    if policy not in (POLICY_GREEDY, POLICY_RL):
        raise InputError(f"policy must be 'greedy' or 'rl', got {policy!r}")
    edges: list[CandidateEdge] = []
    driver_states: dict = {}
    for req in requests:
        feasible = []
        for drv in drivers:
            pickup_s = travel_time_fn(drv.position, req.origin)
            if pickup_s <= filter_cfg.max_pickup_s:
                feasible.append((pickup_s, drv.driver_id, drv))
        feasible.sort(key=lambda item: (item[0], item[1]))
        del feasible[filter_cfg.max_candidates_per_rider :]
        if not feasible:
            continue
        if policy == POLICY_RL:
            trip_s = travel_time_fn(req.origin, req.destination)
            for pickup_s, driver_id, drv in feasible:
                if driver_id not in driver_states:
                    driver_states[driver_id] = factorize(drv.position, now, coding)
                duration = float(pickup_s + trip_s)
                dest_state = factorize(req.destination, now + duration, coding)
                if cancel_prob_fn is None:
                    cancel_prob = req.cancel_prob
                else:
                    cancel_prob = cancel_prob_fn(req, pickup_s)
                w = advantage(
                    table,
                    driver_states[driver_id],
                    dest_state,
                    req.fare,
                    duration,
                    cancel_prob,
                    learner,
                )
                edges.append(CandidateEdge(req.rider_id, driver_id, w, float(pickup_s)))
        else:
            for pickup_s, driver_id, _ in feasible:
                edges.append(CandidateEdge(req.rider_id, driver_id, -float(pickup_s), float(pickup_s)))
    return edges
