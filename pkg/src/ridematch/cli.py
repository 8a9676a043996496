"""Command-line entry point.

Subcommands: `simulate` (one market run), `experiment` (a two-week
switchback), `solve` (one-shot assignment over an edge-list file), and
`export-heatmap` (grid of cell values from the model snapshot).  Exit codes: 0
on success, 2 for configuration/usage problems, 1 for runtime failures.
All file outputs are staged and atomically renamed into place, and every
text output opens with the seed that produced it.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace

from .config import DEFAULT_CONFIG, RunConfig, config_to_json, load_config_file, validate_config
from .errors import ConfigError, RideMatchError
from .experiment import (
    buckets_tsv,
    compute_bucket_metrics,
    effects_tsv,
    make_plan,
    plan_tsv,
    run_switchback,
)
from .marketplace import events_tsv, export_heatmap, hourly_tsv, run
from .matching import CandidateEdge, greedy_assignment, solve_assignment
from .values import ValueTable, restore, snapshot


def _stage_outputs(out_dir: str, files: dict[str, "str | bytes"]) -> None:
    """Write every file to a temp name, then rename all into place."""
    os.makedirs(out_dir, exist_ok=True)
    staged = []
    try:
        for name, content in files.items():
            tmp_path = os.path.join(out_dir, f".{name}.tmp")
            mode = "wb" if isinstance(content, bytes) else "w"
            with open(tmp_path, mode) as fh:
                fh.write(content)
            staged.append((tmp_path, os.path.join(out_dir, name)))
    except BaseException:
        for tmp_path, _ in staged:
            try:
                os.unlink(tmp_path)
            except OSError:
                pass
        raise
    for tmp_path, final_path in staged:
        os.replace(tmp_path, final_path)


def _load_run_config(args) -> RunConfig:
    if args.config is None:
        cfg = validate_config("{}")
    else:
        cfg = load_config_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, scenario=replace(cfg.scenario, rng_seed=args.seed))
    if getattr(args, "policy", None) is not None:
        cfg = replace(cfg, policy=args.policy)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _load_snapshot(path: str) -> ValueTable:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ConfigError([(path, f"cannot read snapshot: {exc}")]) from None
    return restore(data)


def _read_edges(path: str) -> list[CandidateEdge]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError([(path, f"cannot read edge file: {exc}")]) from None
    edges = []
    problems = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split("\t") if "\t" in text else text.split()
        if len(parts) != 4:
            problems.append((f"{path}:{lineno}", f"expected 4 fields (rider_id driver_id weight pickup_s), got {len(parts)}"))
            continue
        rider_id, driver_id, weight_s, pickup_s_s = parts
        try:
            weight = float(weight_s)
            pickup_s = float(pickup_s_s)
        except ValueError:
            problems.append((f"{path}:{lineno}", "weight and pickup_s must be numbers"))
            continue
        if not math.isfinite(weight) or not math.isfinite(pickup_s) or pickup_s < 0:
            problems.append((f"{path}:{lineno}", "weight must be finite and pickup_s >= 0"))
            continue
        edges.append(CandidateEdge(rider_id, driver_id, weight, pickup_s))
    if problems:
        raise ConfigError(problems)
    return edges


def _plan_text(plan, header_lines: list[str]) -> str:
    lines = list(header_lines)
    lines.append(f"# objective={plan.objective:.6f}")
    lines.append(f"# matched={len(plan.pairs)}")
    for rider_id, driver_id in plan.pairs:
        lines.append(f"pair\t{rider_id}\t{driver_id}")
    for rider_id in sorted(plan.unmatched_riders):
        lines.append(f"unmatched_rider\t{rider_id}")
    for driver_id in sorted(plan.unmatched_drivers):
        lines.append(f"unmatched_driver\t{driver_id}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    table = _load_snapshot(args.snapshot) if args.snapshot else None
    learn = args.learn if args.learn is not None else cfg.policy == "rl"
    log, table = run(
        cfg.scenario,
        cfg.policy,
        table,
        learn,
        coding=cfg.coding,
        learner=cfg.learner,
        filter_cfg=cfg.filter,
    )
    files = {
        "config_resolved.json": config_to_json(cfg),
        "events.tsv": events_tsv(log),
        "hourly.tsv": hourly_tsv(log),
        "value_table.rlvt": snapshot(table),
    }
    _stage_outputs(cfg.output_dir, files)
    print(f"simulate: seed={cfg.scenario.rng_seed} policy={cfg.policy} "
          f"events={len(log.events)} -> {cfg.output_dir}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_run_config(args)
    freeze = cfg.experiment.freeze_learning_in_control or args.freeze_learning_in_control
    plan = make_plan(cfg.scenario.region_id, cfg.experiment.bucket_len_s, cfg.scenario.rng_seed)
    table = _load_snapshot(args.snapshot) if args.snapshot else None
    estimates, log, table = run_switchback(
        cfg.scenario,
        plan,
        cfg.burn,
        table,
        coding=cfg.coding,
        learner=cfg.learner,
        filter_cfg=cfg.filter,
        freeze_learning_in_control=freeze,
    )
    samples = compute_bucket_metrics(log, plan.bucket_len_s, cfg.burn)
    files = {
        "config_resolved.json": config_to_json(cfg),
        "plan.tsv": plan_tsv(plan),
        "buckets.tsv": buckets_tsv(samples, plan),
        "effects.tsv": effects_tsv(estimates, plan),
        "events.tsv": events_tsv(log),
        "hourly.tsv": hourly_tsv(log),
        "value_table.rlvt": snapshot(table),
    }
    _stage_outputs(cfg.output_dir, files)
    for est in estimates:
        if est.error:
            print(f"experiment: {est.metric}: {est.error}")
        else:
            print(
                f"experiment: {est.metric}: relative_effect={est.relative_effect:+.4f} "
                f"stderr={est.stderr:.4f} n={est.n_buckets}"
            )
    print(f"experiment: seed={cfg.scenario.rng_seed} -> {cfg.output_dir}")
    return 0


def cmd_solve(args) -> int:
    edges = _read_edges(args.edges)
    if args.baseline:
        plan = greedy_assignment(edges)
        solver = "greedy"
    else:
        plan = solve_assignment(edges, admit_threshold=args.threshold)
        solver = "optimal"
    text = _plan_text(plan, [f"# solver={solver}", f"# edges={len(edges)}"])
    sys.stdout.write(text)
    if args.out is not None:
        _stage_outputs(args.out, {"plan.tsv": text})
    return 0


def cmd_export_heatmap(args) -> int:
    cfg = _load_run_config(args)
    table = _load_snapshot(args.snapshot)
    rows = export_heatmap(table, args.time, cfg.scenario.bbox, cfg.coding)
    lines = [
        f"# seed={cfg.scenario.rng_seed}",
        f"# snapshot={os.path.basename(args.snapshot)}",
        f"# time={args.time:.6f}",
        "cell\tcenter_lat\tcenter_lon\tvalue",
    ]
    for code, lat, lon, value in rows:
        lines.append(f"{code}\t{lat:.6f}\t{lon:.6f}\t{value:.6f}")
    text = "\n".join(lines) + "\n"
    out_dir = args.out if args.out is not None else cfg.output_dir
    _stage_outputs(out_dir, {"heatmap.tsv": text})
    print(f"export-heatmap: {len(rows)} cells -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ridematch",
        description="Ride marketplace simulator with a learned batch-matching policy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one simulated market")
    p_sim.add_argument("--config", help="JSON config path (defaults apply when omitted)")
    p_sim.add_argument("--seed", type=int, help="override scenario.rng_seed")
    p_sim.add_argument("--policy", choices=("greedy", "rl"), help="override matching policy")
    p_sim.add_argument("--out", help="override output directory")
    p_sim.add_argument("--snapshot", help="warm-start value table snapshot")
    p_sim.add_argument(
        "--learn",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="toggle online value updates (default: on for rl, off for greedy)",
    )
    p_sim.set_defaults(func=cmd_simulate)

    p_exp = sub.add_parser("experiment", help="run a two-week switchback experiment")
    p_exp.add_argument("--config", help="JSON config path (defaults apply when omitted)")
    p_exp.add_argument("--seed", type=int, help="override scenario.rng_seed (also keys the plan)")
    p_exp.add_argument("--out", help="override output directory")
    p_exp.add_argument("--snapshot", help="warm-start value table snapshot")
    p_exp.add_argument(
        "--freeze-learning-in-control",
        action="store_true",
        help="pause value updates during control buckets",
    )
    p_exp.set_defaults(func=cmd_experiment)

    p_solve = sub.add_parser("solve", help="solve one assignment from an edge-list file")
    p_solve.add_argument("--edges", required=True, help="TSV of rider_id driver_id weight pickup_s")
    p_solve.add_argument("--threshold", type=float, default=None, help="drop edges below this weight")
    p_solve.add_argument("--baseline", action="store_true", help="use the sequential nearest-driver baseline")
    p_solve.add_argument("--out", help="also write plan.tsv to this directory")
    p_solve.set_defaults(func=cmd_solve)

    p_heat = sub.add_parser("export-heatmap", help="export cell values over the region grid")
    p_heat.add_argument("--config", help="JSON config path (defaults apply when omitted)")
    p_heat.add_argument("--snapshot", required=True, help="value table snapshot to evaluate")
    p_heat.add_argument("--time", type=float, required=True, help="timestamp (seconds) to evaluate at")
    p_heat.add_argument("--out", help="override output directory")
    p_heat.set_defaults(func=cmd_export_heatmap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except RideMatchError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
