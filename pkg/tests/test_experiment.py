import math
from statistics import fmean, variance

import numpy as np
import pytest

from ridematch.errors import InputError
from ridematch.experiment import (
    ARM_CONTROL,
    ARM_TREATMENT,
    METRICS,
    PROVENANCE_PAIRED,
    PROVENANCE_RANDOM,
    WEEK_S,
    BucketSample,
    BurnConfig,
    SwitchbackPlan,
    _estimate_from_samples,
    buckets_tsv,
    check_plan_structure,
    compute_bucket_metrics,
    effects_tsv,
    estimate_effects,
    make_plan,
    plan_tsv,
    run_switchback,
    validate_plan,
)
from ridematch.marketplace import (
    BoundingBox,
    DemandModel,
    MarketEvent,
    MetricsLog,
    ScenarioConfig,
    StatusInterval,
    SupplyModel,
    run,
)
from _oracles import retained

BUCKET = 14400
BBOX = BoundingBox(37.75, -122.45, 37.78, -122.42)


def degenerate_plan(arm: str = ARM_CONTROL) -> SwitchbackPlan:
    n = WEEK_S // BUCKET
    assignments = {(w, i): arm for w in (1, 2) for i in range(n)}
    provenance = {k: PROVENANCE_RANDOM for k in assignments}
    return SwitchbackPlan("region-1", BUCKET, 0, assignments, provenance)


def synthetic_samples(rng, n_per_week: int = 42, loc: float = 100.0, scale: float = 5.0):
    samples = []
    for b in range(2 * n_per_week):
        week = 1 if b < n_per_week else 2
        metrics = {m: float(rng.normal(loc, scale)) for m in METRICS}
        samples.append(BucketSample(week=week, index=b % n_per_week, start_s=float(b * BUCKET), metrics=metrics))
    return samples


# ------------------------------------------------------------------- plans


def test_plan_pairing_pattern():
    # whatever bucket 0 draws, bucket 1 is its opposite and week 2 flips both
    seen = set()
    for seed in range(40):
        plan = make_plan("region-1", BUCKET, seed)
        first = plan.assignments[(1, 0)]
        seen.add(first)
        other = ARM_CONTROL if first == ARM_TREATMENT else ARM_TREATMENT
        assert plan.assignments[(1, 1)] == other
        assert plan.assignments[(2, 0)] == other
        assert plan.assignments[(2, 1)] == first
    assert seen == {ARM_CONTROL, ARM_TREATMENT}  # both outcomes occur


def test_plan_is_balanced_and_validates():
    for seed in (0, 1, 7, 12345):
        for bucket_len in (3600, 14400, 21600):
            plan = make_plan("region-1", bucket_len, seed)
            assert validate_plan(plan) == []
            n = plan.buckets_per_week
            for w in (1, 2):
                treated = sum(
                    1 for i in range(n) if plan.assignments[(w, i)] == ARM_TREATMENT
                )
                assert treated * 2 == n


def test_plan_provenance_labels():
    plan = make_plan("region-1", BUCKET, 3)
    n = plan.buckets_per_week
    for i in range(n):
        expected = PROVENANCE_RANDOM if i % 2 == 0 else PROVENANCE_PAIRED
        assert plan.provenance[(1, i)] == expected
        assert plan.provenance[(2, i)] == PROVENANCE_PAIRED


def test_first_bucket_frequency_is_about_half():
    draws = sum(
        1 for seed in range(10_000)
        if make_plan("region-1", BUCKET, seed).assignments[(1, 0)] == ARM_TREATMENT
    )
    assert abs(draws / 10_000 - 0.5) < 0.02


def test_plans_differ_across_regions_and_seeds():
    a = make_plan("region-1", BUCKET, 0)
    b = make_plan("region-2", BUCKET, 0)
    c = make_plan("region-1", BUCKET, 1)
    assert a.assignments == make_plan("region-1", BUCKET, 0).assignments
    assert a.assignments != b.assignments
    assert a.assignments != c.assignments


def test_arm_at_boundaries():
    plan = make_plan("region-1", BUCKET, 5)
    assert plan.arm_at(0.0) == plan.assignments[(1, 0)]
    assert plan.arm_at(BUCKET - 1e-6) == plan.assignments[(1, 0)]
    assert plan.arm_at(float(BUCKET)) == plan.assignments[(1, 1)]
    assert plan.arm_at(float(WEEK_S)) == plan.assignments[(2, 0)]
    assert plan.arm_at(2.0 * WEEK_S - 1.0) == plan.assignments[(2, plan.buckets_per_week - 1)]
    # timestamps at/after the end clamp into the final bucket
    assert plan.arm_at(2.0 * WEEK_S) == plan.assignments[(2, plan.buckets_per_week - 1)]


def test_make_plan_rejects_bad_bucket_lengths():
    with pytest.raises(InputError):
        make_plan("region-1", 10_000, 0)  # does not divide a week
    with pytest.raises(InputError):
        make_plan("region-1", 0, 0)
    with pytest.raises(InputError):
        make_plan("region-1", WEEK_S, 0)  # one bucket per week: odd count


def test_validate_plan_catches_violations():
    plan = make_plan("region-1", BUCKET, 2)
    n = plan.buckets_per_week

    broken = dict(plan.assignments)
    broken[(2, 0)] = broken[(1, 0)]  # break the week flip
    problems = validate_plan(SwitchbackPlan("region-1", BUCKET, 2, broken, plan.provenance))
    assert problems

    missing = dict(plan.assignments)
    del missing[(1, n - 1)]
    problems = validate_plan(SwitchbackPlan("region-1", BUCKET, 2, missing, plan.provenance))
    assert any("cover" in msg for _, msg in problems)

    assert validate_plan(degenerate_plan()) != []  # not 50/50
    assert check_plan_structure(degenerate_plan()) == []  # but structurally fine


# ---------------------------------------------------------- bucket metrics


def tiny_log(events, intervals, horizon=2.0 * WEEK_S) -> MetricsLog:
    return MetricsLog(region_id="region-1", seed=0, horizon_s=horizon, events=events, intervals=intervals)


def test_burn_windows_discard_exactly_the_trimmed_timestamps():
    scn = ScenarioConfig(
        bbox=BBOX,
        horizon_s=4.0 * BUCKET,
        rng_seed=6,
        cycle_s=30.0,
        demand=DemandModel(base_per_hour=25.0),
        supply=SupplyModel(initial_drivers=5, logins_per_hour=1.0),
    )
    log, _ = run(scn, "greedy")
    burn = BurnConfig(burn_in_s=1800.0, burn_out_s=1800.0)
    samples = compute_bucket_metrics(log, BUCKET, burn)
    by_bucket = {(s.week, s.index): s for s in samples}
    # independent recount of request arrivals per retained window
    for b in range(4):
        wanted = sum(
            1
            for e in log.events
            if e.kind == "request_arrival"
            and retained(e.time, BUCKET, 1800.0, 1800.0, 2.0 * WEEK_S)
            and int(e.time // BUCKET) == b
        )
        expired = sum(
            1
            for e in log.events
            if e.kind == "request_expired"
            and retained(e.time, BUCKET, 1800.0, 1800.0, 2.0 * WEEK_S)
            and int(e.time // BUCKET) == b
        )
        s = by_bucket[(1, b)]
        if wanted == 0:
            assert s.metrics["unavailability_rate"] is None
        else:
            assert s.metrics["unavailability_rate"] == pytest.approx(expired / wanted)


def test_interval_clipping_to_retained_windows():
    # one driver idle across the first two buckets: retained online time per
    # covered bucket is exactly bucket_len - burn_in - burn_out
    iv = StatusInterval(driver_id=1, start=0.0, end=2.0 * BUCKET, status="idle")
    trip = MarketEvent(time=5000.0, kind="trip_complete", rider_id=1, driver_id=1, pickup_s=10, trip_s=20, fare=9.0)
    log = tiny_log([trip], [iv])
    burn = BurnConfig(burn_in_s=1800.0, burn_out_s=1800.0)
    samples = compute_bucket_metrics(log, BUCKET, burn)
    retained_len = BUCKET - 3600.0
    first = samples[0]
    assert first.metrics["rides_per_driver_hour"] == pytest.approx(1.0 / (retained_len / 3600.0))
    second = samples[1]
    assert second.metrics["rides_per_driver_hour"] == pytest.approx(0.0)
    assert second.metrics["gross_fares"] == 0.0


def test_event_in_burn_window_is_dropped():
    inside = MarketEvent(time=100.0, kind="request_arrival", rider_id=1)  # burn-in
    edge = MarketEvent(time=1800.0, kind="request_arrival", rider_id=2)  # first retained second
    tail = MarketEvent(time=BUCKET - 100.0, kind="request_arrival", rider_id=3)  # burn-out
    log = tiny_log([inside, edge, tail], [])
    samples = compute_bucket_metrics(log, BUCKET, BurnConfig(1800.0, 1800.0))
    assert samples[0].metrics["unavailability_rate"] == pytest.approx(0.0)
    # exactly one arrival retained: the one at the burn-in boundary
    assert samples[0].metrics["cancellation_rate"] == pytest.approx(0.0)


def test_burn_config_validation_names_both_fields():
    problems = BurnConfig(burn_in_s=8000.0, burn_out_s=7000.0).validate(BUCKET)
    assert len(problems) == 1
    _, msg = problems[0]
    assert "burn_in_s" in msg and "burn_out_s" in msg
    assert BurnConfig().validate(BUCKET) == []
    assert BurnConfig(burn_in_s=-1.0).validate() != []


# ----------------------------------------------------------------- effects


def test_relative_effect_arithmetic():
    samples = []
    for i, (arm_metric, week) in enumerate([(10.0, 1), (10.0, 1), (9.0, 1), (9.0, 1)]):
        samples.append(
            BucketSample(week=week, index=i, start_s=i * BUCKET, metrics={m: arm_metric for m in METRICS})
        )
    arms = {0: ARM_CONTROL, 1: ARM_CONTROL, 2: ARM_TREATMENT, 3: ARM_TREATMENT}
    estimates = _estimate_from_samples(samples, lambda s: arms[s.index])
    for est in estimates:
        assert est.error is None
        assert est.relative_effect == pytest.approx(-0.10)
        assert est.control_mean == pytest.approx(10.0)
        assert est.treatment_mean == pytest.approx(9.0)
        assert est.n_buckets == 4


def test_stderr_matches_delta_method():
    rng = np.random.default_rng(15)
    samples = synthetic_samples(rng)
    plan = make_plan("region-1", BUCKET, 0)
    estimates = _estimate_from_samples(samples, lambda s: plan.assignments[(s.week, s.index)])
    treated = [s.metrics["gross_fares"] for s in samples if plan.assignments[(s.week, s.index)] == ARM_TREATMENT]
    control = [s.metrics["gross_fares"] for s in samples if plan.assignments[(s.week, s.index)] == ARM_CONTROL]
    m_t, m_c = fmean(treated), fmean(control)
    se_t2, se_c2 = variance(treated) / len(treated), variance(control) / len(control)
    expected = math.sqrt(se_t2 / m_c**2 + m_t**2 * se_c2 / m_c**4)
    est = next(e for e in estimates if e.metric == "gross_fares")
    assert est.stderr == pytest.approx(expected, rel=1e-12)
    assert est.relative_effect == pytest.approx(m_t / m_c - 1.0, rel=1e-12)


def test_permutation_null_is_centered_on_zero():
    rng = np.random.default_rng(33)
    samples = synthetic_samples(rng)
    perm_rng = np.random.default_rng(77)
    effects = []
    n = len(samples)
    for _ in range(1000):
        labels = [ARM_TREATMENT] * (n // 2) + [ARM_CONTROL] * (n // 2)
        perm_rng.shuffle(labels)
        arm_by_key = {(s.week, s.index): labels[i] for i, s in enumerate(samples)}
        (est,) = [
            e
            for e in _estimate_from_samples(samples, lambda s: arm_by_key[(s.week, s.index)])
            if e.metric == "gross_fares"
        ]
        effects.append(est.relative_effect)
    assert abs(fmean(effects)) < 0.002


def test_all_control_plan_reports_insufficient_data_per_metric():
    scn = ScenarioConfig(
        bbox=BBOX,
        horizon_s=2.0 * WEEK_S,
        cycle_s=float(BUCKET),
        rng_seed=0,
        demand=DemandModel(base_per_hour=0.0),
        supply=SupplyModel(initial_drivers=0, logins_per_hour=0.0),
    )
    estimates, log, _ = run_switchback(scn, degenerate_plan(), BurnConfig())
    assert [e.metric for e in estimates] == list(METRICS)
    for est in estimates:
        assert est.error is not None
        assert "insufficient" in est.error
        assert math.isnan(est.relative_effect)


def test_estimate_effects_accepts_lopsided_plans_but_not_broken_ones():
    log = tiny_log([], [])
    estimates = estimate_effects(log, degenerate_plan(), BurnConfig())
    assert all(e.error for e in estimates)
    bad = SwitchbackPlan("region-1", BUCKET, 0, {(1, 0): ARM_CONTROL}, {})
    with pytest.raises(InputError):
        estimate_effects(log, bad, BurnConfig())


def test_run_switchback_rejects_mismatched_inputs():
    plan = make_plan("region-1", BUCKET, 0)
    good = ScenarioConfig(
        bbox=BBOX,
        horizon_s=2.0 * WEEK_S,
        demand=DemandModel(base_per_hour=0.0),
        supply=SupplyModel(initial_drivers=0, logins_per_hour=0.0),
    )
    with pytest.raises(InputError):
        run_switchback(
            ScenarioConfig(bbox=BBOX, horizon_s=WEEK_S * 1.0), plan, BurnConfig()
        )  # one week only
    with pytest.raises(InputError):
        run_switchback(
            ScenarioConfig(bbox=BBOX, horizon_s=2.0 * WEEK_S, region_id="elsewhere"),
            plan,
            BurnConfig(),
        )
    with pytest.raises(InputError):
        run_switchback(good, plan, BurnConfig(burn_in_s=BUCKET / 2.0, burn_out_s=BUCKET / 2.0))


# ------------------------------------------------------------- text output


def test_plan_tsv_layout():
    plan = make_plan("region-1", BUCKET, 9)
    text = plan_tsv(plan)
    lines = text.splitlines()
    assert lines[0] == "# seed=9"
    assert lines[3] == "week\tbucket\tstart_s\tarm\tprovenance"
    rows = [line.split("\t") for line in lines[4:]]
    assert len(rows) == 2 * plan.buckets_per_week
    assert rows[0][:2] == ["1", "0"]
    assert rows[-1][0] == "2"
    arms = {r[3] for r in rows}
    assert arms == {ARM_TREATMENT, ARM_CONTROL}


def test_buckets_and_effects_tsv_shape():
    rng = np.random.default_rng(3)
    samples = synthetic_samples(rng)
    plan = make_plan("region-1", BUCKET, 3)
    text = buckets_tsv(samples, plan)
    lines = text.splitlines()
    assert lines[0] == "# seed=3"
    assert len(lines) == 3 + len(samples)
    estimates = _estimate_from_samples(samples, lambda s: plan.assignments[(s.week, s.index)])
    etext = effects_tsv(estimates, plan)
    elines = etext.splitlines()
    assert elines[2].startswith("metric\t")
    assert len(elines) == 3 + len(METRICS)
    # numeric fields render with six decimals, errors as trailing text
    first = elines[3].split("\t")
    assert first[0] == METRICS[0]
    assert "." in first[1]
