"""Run configuration: one JSON document with full defaulting.

Every field has a default, so `{}` is a valid config; unknown fields and
type mismatches are rejected.  Validation reports every violation at once,
each addressed by its dotted field path, and a parsed config can be
re-serialized canonically (used both for reproducibility headers and the
round-trip guarantee).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .experiment import WEEK_S, BurnConfig
from .marketplace import (
    BoundingBox,
    CellWeight,
    DemandModel,
    FareParams,
    ScenarioConfig,
    SupplyModel,
)
from .matching import FilterConfig
from .spacetime import CodingConfig
from .values import LearnerConfig

DEFAULT_CONFIG: dict = {
    "policy": "rl",
    "output_dir": "out",
    "scenario": {
        "region_id": "region-1",
        "bbox": {"min_lat": 37.71, "min_lon": -122.51, "max_lat": 37.82, "max_lon": -122.37},
        "horizon_s": 86400.0,
        "cycle_s": 4.0,
        "speed_mps": 8.33,
        "rng_seed": 0,
        "patience_s": 300.0,
        "cancel_prob": 0.05,
        "cancel_prob_per_pickup_s": 0.0,
        "cancel_prob_max": 0.9,
        "fare": {"base": 2.0, "per_km": 1.0, "per_min": 0.2},
        "demand": {
            "base_per_hour": 30.0,
            "hour_profile": [1.0],
            "origin_cells": [],
            "dest_cells": [],
            "cell_precision": 6,
        },
        "supply": {
            "initial_drivers": 10,
            "logins_per_hour": 2.0,
            "hour_profile": [1.0],
            "session_mean_s": 14400.0,
            "session_min_s": 600.0,
        },
    },
    "coding": {
        "cell_precision": 6,
        "bucket_width_s": 3600.0,
        "epsilon_m": 1.0,
        "use_spatial": True,
        "use_temporal": True,
        "use_interaction": True,
    },
    "learner": {"alpha": 0.05, "gamma": 0.9999, "idle_duration_s": 4.0, "default_value": 0.0},
    "filter": {"max_pickup_s": 900.0, "max_candidates_per_rider": 15},
    "burn": {"burn_in_s": 1800.0, "burn_out_s": 1800.0},
    "experiment": {"bucket_len_s": 14400, "freeze_learning_in_control": False},
}

# Leaf type tags: int / number / bool / str / enum / number_list / cell_list.
_SCHEMA: dict = {
    "policy": ("enum", ("greedy", "rl")),
    "output_dir": ("str",),
    "scenario": {
        "region_id": ("str",),
        "bbox": {
            "min_lat": ("number",),
            "min_lon": ("number",),
            "max_lat": ("number",),
            "max_lon": ("number",),
        },
        "horizon_s": ("number",),
        "cycle_s": ("number",),
        "speed_mps": ("number",),
        "rng_seed": ("int",),
        "patience_s": ("number",),
        "cancel_prob": ("number",),
        "cancel_prob_per_pickup_s": ("number",),
        "cancel_prob_max": ("number",),
        "fare": {"base": ("number",), "per_km": ("number",), "per_min": ("number",)},
        "demand": {
            "base_per_hour": ("number",),
            "hour_profile": ("number_list",),
            "origin_cells": ("cell_list",),
            "dest_cells": ("cell_list",),
            "cell_precision": ("int",),
        },
        "supply": {
            "initial_drivers": ("int",),
            "logins_per_hour": ("number",),
            "hour_profile": ("number_list",),
            "session_mean_s": ("number",),
            "session_min_s": ("number",),
        },
    },
    "coding": {
        "cell_precision": ("int",),
        "bucket_width_s": ("number",),
        "epsilon_m": ("number",),
        "use_spatial": ("bool",),
        "use_temporal": ("bool",),
        "use_interaction": ("bool",),
    },
    "learner": {
        "alpha": ("number",),
        "gamma": ("number",),
        "idle_duration_s": ("number",),
        "default_value": ("number",),
    },
    "filter": {"max_pickup_s": ("number",), "max_candidates_per_rider": ("int",)},
    "burn": {"burn_in_s": ("number",), "burn_out_s": ("number",)},
    "experiment": {"bucket_len_s": ("int",), "freeze_learning_in_control": ("bool",)},
}


@dataclass(frozen=True)
class ExperimentParams:
    bucket_len_s: int = 14400
    freeze_learning_in_control: bool = False

    def validate(self) -> list[tuple[str, str]]:
        problems = []
        if not isinstance(self.bucket_len_s, int) or self.bucket_len_s <= 0:
            problems.append(("bucket_len_s", f"must be a positive int, got {self.bucket_len_s!r}"))
        elif WEEK_S % self.bucket_len_s != 0:
            problems.append(("bucket_len_s", f"must divide one week ({WEEK_S} s)"))
        elif (WEEK_S // self.bucket_len_s) % 2 != 0:
            problems.append(("bucket_len_s", "must yield an even number of buckets per week"))
        return problems


@dataclass(frozen=True)
class RunConfig:
    """A fully-resolved run configuration."""

    scenario: ScenarioConfig
    coding: CodingConfig = field(default_factory=CodingConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    burn: BurnConfig = field(default_factory=BurnConfig)
    experiment: ExperimentParams = field(default_factory=ExperimentParams)
    output_dir: str = "out"
    policy: str = "rl"


def _check_leaf(path: str, spec: tuple, value, problems: list) -> bool:
    kind = spec[0]
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append((path, f"must be an integer, got {value!r}"))
            return False
    elif kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append((path, f"must be a number, got {value!r}"))
            return False
    elif kind == "bool":
        if not isinstance(value, bool):
            problems.append((path, f"must be a boolean, got {value!r}"))
            return False
    elif kind == "str":
        if not isinstance(value, str):
            problems.append((path, f"must be a string, got {value!r}"))
            return False
    elif kind == "enum":
        if value not in spec[1]:
            problems.append((path, f"must be one of {list(spec[1])}, got {value!r}"))
            return False
    elif kind == "number_list":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
        ):
            problems.append((path, f"must be a list of numbers, got {value!r}"))
            return False
    elif kind == "cell_list":
        if not isinstance(value, list):
            problems.append((path, f"must be a list of {{cell, weight}} objects, got {value!r}"))
            return False
        for i, item in enumerate(value):
            if (
                not isinstance(item, dict)
                or set(item) != {"cell", "weight"}
                or not isinstance(item.get("cell"), str)
                or isinstance(item.get("weight"), bool)
                or not isinstance(item.get("weight"), (int, float))
            ):
                problems.append((f"{path}[{i}]", f"must be {{cell: str, weight: number}}, got {item!r}"))
                return False
    return True


def _merge(schema: dict, defaults: dict, data: dict, prefix: str, problems: list) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in schema:
            problems.append((path, "unknown field"))
            continue
        spec = schema[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                problems.append((path, f"must be an object, got {value!r}"))
                continue
            merged[key] = _merge(spec, defaults[key], value, path + ".", problems)
        else:
            if _check_leaf(path, spec, value, problems):
                merged[key] = copy.deepcopy(value)
    return merged


def _build(merged: dict) -> RunConfig:
    scn = merged["scenario"]
    scenario = ScenarioConfig(
        bbox=BoundingBox(**scn["bbox"]),
        region_id=scn["region_id"],
        horizon_s=float(scn["horizon_s"]),
        cycle_s=float(scn["cycle_s"]),
        speed_mps=float(scn["speed_mps"]),
        rng_seed=scn["rng_seed"],
        patience_s=float(scn["patience_s"]),
        cancel_prob=float(scn["cancel_prob"]),
        cancel_prob_per_pickup_s=float(scn["cancel_prob_per_pickup_s"]),
        cancel_prob_max=float(scn["cancel_prob_max"]),
        fare=FareParams(**{k: float(v) for k, v in scn["fare"].items()}),
        demand=DemandModel(
            base_per_hour=float(scn["demand"]["base_per_hour"]),
            hour_profile=tuple(float(v) for v in scn["demand"]["hour_profile"]),
            origin_cells=tuple(
                CellWeight(c["cell"], float(c["weight"])) for c in scn["demand"]["origin_cells"]
            ),
            dest_cells=tuple(
                CellWeight(c["cell"], float(c["weight"])) for c in scn["demand"]["dest_cells"]
            ),
            cell_precision=scn["demand"]["cell_precision"],
        ),
        supply=SupplyModel(
            initial_drivers=scn["supply"]["initial_drivers"],
            logins_per_hour=float(scn["supply"]["logins_per_hour"]),
            hour_profile=tuple(float(v) for v in scn["supply"]["hour_profile"]),
            session_mean_s=float(scn["supply"]["session_mean_s"]),
            session_min_s=float(scn["supply"]["session_min_s"]),
        ),
    )
    return RunConfig(
        scenario=scenario,
        coding=CodingConfig(
            cell_precision=merged["coding"]["cell_precision"],
            bucket_width_s=float(merged["coding"]["bucket_width_s"]),
            epsilon_m=float(merged["coding"]["epsilon_m"]),
            use_spatial=merged["coding"]["use_spatial"],
            use_temporal=merged["coding"]["use_temporal"],
            use_interaction=merged["coding"]["use_interaction"],
        ),
        learner=LearnerConfig(
            alpha=float(merged["learner"]["alpha"]),
            gamma=float(merged["learner"]["gamma"]),
            idle_duration_s=float(merged["learner"]["idle_duration_s"]),
            default_value=float(merged["learner"]["default_value"]),
        ),
        filter=FilterConfig(
            max_pickup_s=float(merged["filter"]["max_pickup_s"]),
            max_candidates_per_rider=merged["filter"]["max_candidates_per_rider"],
        ),
        burn=BurnConfig(
            burn_in_s=float(merged["burn"]["burn_in_s"]),
            burn_out_s=float(merged["burn"]["burn_out_s"]),
        ),
        experiment=ExperimentParams(
            bucket_len_s=merged["experiment"]["bucket_len_s"],
            freeze_learning_in_control=merged["experiment"]["freeze_learning_in_control"],
        ),
        output_dir=merged["output_dir"],
        policy=merged["policy"],
    )


def validate_config(text: str) -> RunConfig:
    """Parse and validate config JSON, reporting every violation at once."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("<config>", f"not valid JSON: {exc}")]) from None
    if not isinstance(data, dict):
        raise ConfigError([("<config>", f"top level must be an object, got {type(data).__name__}")])
    problems: list[tuple[str, str]] = []
    # Leaf failures leave the default value in place, so the merged tree is
    # always buildable and range checks can still run on the other fields.
    merged = _merge(_SCHEMA, DEFAULT_CONFIG, data, "", problems)
    cfg = _build(merged)
    problems.extend((f"scenario.{f}", m) for f, m in cfg.scenario.validate())
    problems.extend((f"coding.{f}", m) for f, m in cfg.coding.validate())
    problems.extend((f"learner.{f}", m) for f, m in cfg.learner.validate())
    problems.extend((f"filter.{f}", m) for f, m in cfg.filter.validate())
    problems.extend((f"experiment.{f}", m) for f, m in cfg.experiment.validate())
    bucket_len = cfg.experiment.bucket_len_s if not any(p[0].startswith("experiment.") for p in problems) else None
    problems.extend((f"burn.{f}", m) for f, m in cfg.burn.validate(bucket_len))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config_file(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([(path, f"cannot read config file: {exc}")]) from None
    return validate_config(text)


def config_to_json(cfg: RunConfig) -> str:
    """Serialize a config canonically (schema order, two-space indent).

    ``output_dir`` is deliberately left out: it has no effect on any
    computation, and omitting it keeps output directories byte-identical
    no matter where they are written.
    """
    scn = cfg.scenario
    doc = {
        "policy": cfg.policy,
        "scenario": {
            "region_id": scn.region_id,
            "bbox": {
                "min_lat": scn.bbox.min_lat,
                "min_lon": scn.bbox.min_lon,
                "max_lat": scn.bbox.max_lat,
                "max_lon": scn.bbox.max_lon,
            },
            "horizon_s": scn.horizon_s,
            "cycle_s": scn.cycle_s,
            "speed_mps": scn.speed_mps,
            "rng_seed": scn.rng_seed,
            "patience_s": scn.patience_s,
            "cancel_prob": scn.cancel_prob,
            "cancel_prob_per_pickup_s": scn.cancel_prob_per_pickup_s,
            "cancel_prob_max": scn.cancel_prob_max,
            "fare": {"base": scn.fare.base, "per_km": scn.fare.per_km, "per_min": scn.fare.per_min},
            "demand": {
                "base_per_hour": scn.demand.base_per_hour,
                "hour_profile": list(scn.demand.hour_profile),
                "origin_cells": [{"cell": c.cell, "weight": c.weight} for c in scn.demand.origin_cells],
                "dest_cells": [{"cell": c.cell, "weight": c.weight} for c in scn.demand.dest_cells],
                "cell_precision": scn.demand.cell_precision,
            },
            "supply": {
                "initial_drivers": scn.supply.initial_drivers,
                "logins_per_hour": scn.supply.logins_per_hour,
                "hour_profile": list(scn.supply.hour_profile),
                "session_mean_s": scn.supply.session_mean_s,
                "session_min_s": scn.supply.session_min_s,
            },
        },
        "coding": {
            "cell_precision": cfg.coding.cell_precision,
            "bucket_width_s": cfg.coding.bucket_width_s,
            "epsilon_m": cfg.coding.epsilon_m,
            "use_spatial": cfg.coding.use_spatial,
            "use_temporal": cfg.coding.use_temporal,
            "use_interaction": cfg.coding.use_interaction,
        },
        "learner": {
            "alpha": cfg.learner.alpha,
            "gamma": cfg.learner.gamma,
            "idle_duration_s": cfg.learner.idle_duration_s,
            "default_value": cfg.learner.default_value,
        },
        "filter": {
            "max_pickup_s": cfg.filter.max_pickup_s,
            "max_candidates_per_rider": cfg.filter.max_candidates_per_rider,
        },
        "burn": {"burn_in_s": cfg.burn.burn_in_s, "burn_out_s": cfg.burn.burn_out_s},
        "experiment": {
            "bucket_len_s": cfg.experiment.bucket_len_s,
            "freeze_learning_in_control": cfg.experiment.freeze_learning_in_control,
        },
    }
    return json.dumps(doc, indent=2) + "\n"
