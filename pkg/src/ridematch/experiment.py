"""Time-sliced switchback experiments.

A two-week horizon is cut into fixed-width buckets.  Even-indexed buckets
in week one draw their arm at random; the following bucket takes the
opposite arm, and week two mirrors week one with arms flipped, so both
weeks and every adjacent pair are exactly balanced.  Metrics are computed
per bucket with configurable burn-in/burn-out trims at every switch, and
treatment effects are bucket-level mean ratios with delta-method standard
errors.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from statistics import fmean, variance
from typing import Callable

import numpy as np

from .errors import InputError
from .marketplace import MetricsLog, ScenarioConfig, run
from .matching import POLICY_GREEDY, POLICY_RL, FilterConfig
from .spacetime import CodingConfig
from .values import LearnerConfig, ValueTable

WEEK_S = 604_800

ARM_TREATMENT = "treatment"
ARM_CONTROL = "control"

PROVENANCE_RANDOM = "random"
PROVENANCE_PAIRED = "paired"

METRICS = (
    "unavailability_rate",
    "cancellation_rate",
    "mean_pickup_s",
    "rides_per_driver_hour",
    "gross_fares",
)


@dataclass(frozen=True)
class BurnConfig:
    """Seconds discarded after and before every arm switch."""

    burn_in_s: float = 1800.0
    burn_out_s: float = 1800.0

    def validate(self, bucket_len_s: float | None = None) -> list[tuple[str, str]]:
        problems = []
        for name in ("burn_in_s", "burn_out_s"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                problems.append((name, f"must be finite and >= 0, got {v!r}"))
        if not problems and bucket_len_s is not None:
            if self.burn_in_s + self.burn_out_s >= bucket_len_s:
                problems.append(
                    (
                        "burn_in_s",
                        f"burn_in_s + burn_out_s = {self.burn_in_s + self.burn_out_s} "
                        f"must be < bucket length {bucket_len_s}",
                    )
                )
        return problems


@dataclass(frozen=True)
class SwitchbackPlan:
    """Arm assignments for every (week, bucket) of a two-week experiment."""

    region_id: str
    bucket_len_s: int
    seed: int
    assignments: dict[tuple[int, int], str] = field(default_factory=dict)
    provenance: dict[tuple[int, int], str] = field(default_factory=dict)

    @property
    def buckets_per_week(self) -> int:
        return WEEK_S // self.bucket_len_s

    def arm_at(self, t: float) -> str:
        """The arm in force at timestamp t (clamped to the final bucket)."""
        t = min(max(t, 0.0), 2.0 * WEEK_S - 1e-9)
        week = 1 if t < WEEK_S else 2
        index = int((t % WEEK_S) // self.bucket_len_s)
        return self.assignments[(week, index)]


def check_plan_structure(plan: SwitchbackPlan) -> list[tuple[str, str]]:
    """Check that a plan is usable: divisible buckets, full coverage, known arms.

    Deliberately does not enforce balance or pairing, so deliberately
    lopsided plans (e.g. an all-control A/A harness) still run; those
    stronger invariants live in `validate_plan`.
    """
    problems = []
    if WEEK_S % plan.bucket_len_s != 0:
        problems.append(("bucket_len_s", f"{plan.bucket_len_s} does not divide a week ({WEEK_S})"))
        return problems
    n = plan.buckets_per_week
    if n % 2 != 0:
        problems.append(("bucket_len_s", f"buckets per week must be even, got {n}"))
        return problems
    expected_keys = {(w, i) for w in (1, 2) for i in range(n)}
    if set(plan.assignments) != expected_keys:
        problems.append(("assignments", "must cover every (week, bucket) exactly"))
        return problems
    for w in (1, 2):
        if any(plan.assignments[(w, i)] not in (ARM_TREATMENT, ARM_CONTROL) for i in range(n)):
            problems.append(("assignments", f"week {w} contains an unknown arm"))
    return problems


def validate_plan(plan: SwitchbackPlan) -> list[tuple[str, str]]:
    """Check structure plus balance, pairing, and anti-symmetry."""
    problems = check_plan_structure(plan)
    if problems:
        return problems
    n = plan.buckets_per_week
    for w in (1, 2):
        arms = [plan.assignments[(w, i)] for i in range(n)]
        treated = sum(1 for a in arms if a == ARM_TREATMENT)
        if treated * 2 != n:
            problems.append(("assignments", f"week {w} is not a 50/50 split"))
        for i in range(0, n, 2):
            if arms[i] == arms[i + 1]:
                problems.append(("assignments", f"week {w} buckets {i},{i + 1} are not opposite"))
    for i in range(n):
        if plan.assignments[(1, i)] == plan.assignments[(2, i)]:
            problems.append(("assignments", f"bucket {i} is not flipped across weeks"))
    return problems


def make_plan(region_id: str, bucket_len_s: int, rng_seed: int) -> SwitchbackPlan:
    """Draw a paired, week-flipped switchback plan.

    Even-indexed buckets of week one are random; each odd bucket takes the
    opposite arm of its predecessor, and week two flips week one.  The
    draw is keyed on (seed, region) so multi-region experiments get
    independent plans from one seed.
    """
    if not isinstance(bucket_len_s, int) or bucket_len_s <= 0:
        raise InputError(f"bucket_len_s must be a positive int, got {bucket_len_s!r}")
    if WEEK_S % bucket_len_s != 0:
        raise InputError(f"bucket_len_s {bucket_len_s} must divide one week ({WEEK_S} s)")
    n = WEEK_S // bucket_len_s
    if n % 2 != 0:
        raise InputError(f"bucket_len_s {bucket_len_s} yields an odd bucket count {n}; pairing needs an even count")
    if not isinstance(rng_seed, int) or not 0 <= rng_seed < 2**64:
        raise InputError(f"rng_seed must be an int in [0, 2**64), got {rng_seed!r}")
    digest = hashlib.sha256(f"{rng_seed}:{region_id}".encode()).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    assignments: dict[tuple[int, int], str] = {}
    provenance: dict[tuple[int, int], str] = {}
    for i in range(0, n, 2):
        first = ARM_TREATMENT if rng.random() < 0.5 else ARM_CONTROL
        other = ARM_CONTROL if first == ARM_TREATMENT else ARM_TREATMENT
        assignments[(1, i)] = first
        assignments[(1, i + 1)] = other
        assignments[(2, i)] = other
        assignments[(2, i + 1)] = first
        provenance[(1, i)] = PROVENANCE_RANDOM
        provenance[(1, i + 1)] = PROVENANCE_PAIRED
        provenance[(2, i)] = PROVENANCE_PAIRED
        provenance[(2, i + 1)] = PROVENANCE_PAIRED
    return SwitchbackPlan(
        region_id=region_id,
        bucket_len_s=bucket_len_s,
        seed=rng_seed,
        assignments=assignments,
        provenance=provenance,
    )


@dataclass(frozen=True)
class BucketSample:
    """Metrics of one bucket, computed on its retained (non-burn) window."""

    week: int
    index: int
    start_s: float
    metrics: dict[str, float | None]


@dataclass(frozen=True)
class EffectEstimate:
    """Relative treatment effect of one metric with bucket-level stderr."""

    metric: str
    control_mean: float
    treatment_mean: float
    relative_effect: float
    stderr: float
    n_buckets: int
    error: str | None = None


def compute_bucket_metrics(
    log: MetricsLog, bucket_len_s: int, burn: BurnConfig
) -> list[BucketSample]:
    """Per-bucket marketplace metrics over burn-trimmed windows.

    Events are attributed to buckets by timestamp; events inside the
    burn-in/burn-out windows around each switch are discarded entirely.
    """
    problems = burn.validate(bucket_len_s)
    if problems:
        raise InputError("; ".join(f"{f}: {m}" for f, m in problems))
    if WEEK_S % bucket_len_s != 0:
        raise InputError(f"bucket_len_s {bucket_len_s} must divide one week ({WEEK_S} s)")
    n = WEEK_S // bucket_len_s
    n_buckets = 2 * n

    def bucket_of(t: float) -> int | None:
        """Global bucket index of a retained timestamp, else None."""
        if t < 0 or t >= 2 * WEEK_S:
            return None
        b = int(t // bucket_len_s)
        offset = t - b * bucket_len_s
        if offset < burn.burn_in_s or offset >= bucket_len_s - burn.burn_out_s:
            return None
        return b

    requests = [0] * n_buckets
    expired = [0] * n_buckets
    cancelled = [0] * n_buckets
    trips = [0] * n_buckets
    pickup_sum = [0.0] * n_buckets
    pickup_n = [0] * n_buckets
    fares = [0.0] * n_buckets
    online_s = [0.0] * n_buckets

    for e in log.events:
        b = bucket_of(e.time)
        if b is None:
            continue
        if e.kind == "request_arrival":
            requests[b] += 1
        elif e.kind == "request_expired":
            expired[b] += 1
        elif e.kind == "rider_cancel":
            cancelled[b] += 1
        elif e.kind == "match_made":
            pickup_sum[b] += e.pickup_s
            pickup_n[b] += 1
        elif e.kind == "trip_complete":
            trips[b] += 1
            fares[b] += e.fare

    for _, start, end, _status in log.intervals:
        first = max(0, int(start // bucket_len_s))
        last = min(n_buckets - 1, int(math.ceil(end / bucket_len_s)) - 1)
        for b in range(first, last + 1):
            lo = max(start, b * bucket_len_s + burn.burn_in_s)
            hi = min(end, (b + 1) * bucket_len_s - burn.burn_out_s)
            if hi > lo:
                online_s[b] += hi - lo

    samples = []
    for b in range(n_buckets):
        week = 1 if b < n else 2
        index = b % n
        metrics: dict[str, float | None] = {
            "unavailability_rate": expired[b] / requests[b] if requests[b] else None,
            "cancellation_rate": cancelled[b] / requests[b] if requests[b] else None,
            "mean_pickup_s": pickup_sum[b] / pickup_n[b] if pickup_n[b] else None,
            "rides_per_driver_hour": trips[b] / (online_s[b] / 3600.0) if online_s[b] > 0 else None,
            "gross_fares": fares[b],
        }
        samples.append(
            BucketSample(week=week, index=index, start_s=float(b * bucket_len_s), metrics=metrics)
        )
    return samples


def _estimate_from_samples(
    samples: list[BucketSample], arm_of: Callable[[BucketSample], str]
) -> list[EffectEstimate]:
    estimates = []
    for metric in METRICS:
        treated = []
        control = []
        for s in samples:
            v = s.metrics[metric]
            if v is None:
                continue
            if arm_of(s) == ARM_TREATMENT:
                treated.append(v)
            else:
                control.append(v)
        n_used = len(treated) + len(control)
        if len(treated) < 2 or len(control) < 2:
            estimates.append(
                EffectEstimate(
                    metric=metric,
                    control_mean=math.nan,
                    treatment_mean=math.nan,
                    relative_effect=math.nan,
                    stderr=math.nan,
                    n_buckets=n_used,
                    error=(
                        "insufficient data: need >= 2 retained buckets per arm, got "
                        f"{len(treated)} treatment / {len(control)} control"
                    ),
                )
            )
            continue
        m_t = fmean(treated)
        m_c = fmean(control)
        se_t2 = variance(treated) / len(treated)
        se_c2 = variance(control) / len(control)
        if m_c == 0.0:
            estimates.append(
                EffectEstimate(
                    metric=metric,
                    control_mean=m_c,
                    treatment_mean=m_t,
                    relative_effect=math.nan,
                    stderr=math.nan,
                    n_buckets=n_used,
                    error="insufficient data: control mean is zero, relative effect undefined",
                )
            )
            continue
        rel = m_t / m_c - 1.0
        stderr = math.sqrt(se_t2 / m_c**2 + (m_t**2) * se_c2 / m_c**4)
        estimates.append(
            EffectEstimate(
                metric=metric,
                control_mean=m_c,
                treatment_mean=m_t,
                relative_effect=rel,
                stderr=stderr,
                n_buckets=n_used,
            )
        )
    return estimates


def estimate_effects(
    log: MetricsLog, plan: SwitchbackPlan, burn: BurnConfig
) -> list[EffectEstimate]:
    """Relative treatment effects (treatment/control - 1) per metric.

    Buckets are the independent unit: each retained bucket contributes one
    sample to its arm, means are compared across arms, and the standard
    error follows from the per-arm bucket variances by the delta method.
    Metrics short on data come back with `error` set instead of numbers.
    """
    problems = check_plan_structure(plan)
    if problems:
        raise InputError("; ".join(f"{f}: {m}" for f, m in problems))
    samples = compute_bucket_metrics(log, plan.bucket_len_s, burn)
    return _estimate_from_samples(samples, lambda s: plan.assignments[(s.week, s.index)])


def run_switchback(
    scenario: ScenarioConfig,
    plan: SwitchbackPlan,
    burn: BurnConfig,
    table: ValueTable | None = None,
    *,
    coding: CodingConfig | None = None,
    learner: LearnerConfig | None = None,
    filter_cfg: FilterConfig | None = None,
    freeze_learning_in_control: bool = False,
) -> tuple[list[EffectEstimate], MetricsLog, ValueTable]:
    """Run one two-week switchback and estimate per-metric effects.

    Treatment buckets run the learned-value policy; control buckets run
    the nearest-driver baseline.  The value table learns throughout unless
    `freeze_learning_in_control` pauses updates during control buckets.
    """
    problems = check_plan_structure(plan)
    if problems:
        raise InputError("; ".join(f"{f}: {m}" for f, m in problems))
    if scenario.horizon_s != 2 * WEEK_S:
        raise InputError(
            f"switchback scenarios must span exactly two weeks ({2 * WEEK_S} s), got {scenario.horizon_s!r}"
        )
    if scenario.region_id != plan.region_id:
        raise InputError(f"plan region {plan.region_id!r} does not match scenario region {scenario.region_id!r}")
    burn_problems = burn.validate(plan.bucket_len_s)
    if burn_problems:
        raise InputError("; ".join(f"burn.{f}: {m}" for f, m in burn_problems))

    def policy_fn(t: float) -> str:
        return POLICY_RL if plan.arm_at(t) == ARM_TREATMENT else POLICY_GREEDY

    if freeze_learning_in_control:
        learn_fn: bool | Callable[[float], bool] = lambda t: plan.arm_at(t) == ARM_TREATMENT  # noqa: E731
    else:
        learn_fn = True
    log, table = run(
        scenario,
        policy_fn,
        table,
        learn_fn,
        coding=coding,
        learner=learner,
        filter_cfg=filter_cfg,
    )
    return estimate_effects(log, plan, burn), log, table


def plan_tsv(plan: SwitchbackPlan) -> str:
    """Render a plan as tab-separated text with a seed header."""
    lines = [
        f"# seed={plan.seed}",
        f"# region={plan.region_id}",
        f"# bucket_len_s={plan.bucket_len_s}",
        "week\tbucket\tstart_s\tarm\tprovenance",
    ]
    for week in (1, 2):
        for i in range(plan.buckets_per_week):
            start = (week - 1) * WEEK_S + i * plan.bucket_len_s
            lines.append(
                f"{week}\t{i}\t{start}\t{plan.assignments[(week, i)]}\t{plan.provenance[(week, i)]}"
            )
    return "\n".join(lines) + "\n"


def buckets_tsv(samples: list[BucketSample], plan: SwitchbackPlan) -> str:
    lines = [
        f"# seed={plan.seed}",
        f"# region={plan.region_id}",
        "week\tbucket\tstart_s\tarm\t" + "\t".join(METRICS),
    ]
    for s in samples:
        arm = plan.assignments[(s.week, s.index)]
        values = "\t".join(
            "" if s.metrics[m] is None else f"{s.metrics[m]:.6f}" for m in METRICS
        )
        lines.append(f"{s.week}\t{s.index}\t{s.start_s:.0f}\t{arm}\t{values}")
    return "\n".join(lines) + "\n"


def effects_tsv(estimates: list[EffectEstimate], plan: SwitchbackPlan) -> str:
    lines = [
        f"# seed={plan.seed}",
        f"# region={plan.region_id}",
        "metric\tcontrol_mean\ttreatment_mean\trelative_effect\tstderr\tn_buckets\terror",
    ]
    for est in estimates:
        lines.append(
            "\t".join(
                (
                    est.metric,
                    _num(est.control_mean),
                    _num(est.treatment_mean),
                    _num(est.relative_effect),
                    _num(est.stderr),
                    str(est.n_buckets),
                    est.error or "",
                )
            )
        )
    return "\n".join(lines) + "\n"


def _num(v: float) -> str:
    return "" if math.isnan(v) else f"{v:.6f}"
