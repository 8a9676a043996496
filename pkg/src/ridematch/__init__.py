"""Ride marketplace simulator with a learned batch-matching policy."""

from .config import DEFAULT_CONFIG, RunConfig, load_config_file, validate_config
from .errors import ConfigError, InputError, RideMatchError, SnapshotError
from .experiment import (
    BucketSample,
    BurnConfig,
    EffectEstimate,
    SwitchbackPlan,
    compute_bucket_metrics,
    estimate_effects,
    make_plan,
    run_switchback,
    validate_plan,
)
from .marketplace import (
    BoundingBox,
    DemandModel,
    FareParams,
    MetricsLog,
    RideRequest,
    ScenarioConfig,
    SupplyModel,
    export_heatmap,
    run,
    travel_time,
)
from .matching import (
    CandidateEdge,
    FilterConfig,
    MatchPlan,
    build_edges,
    greedy_assignment,
    solve_assignment,
)
from .spacetime import (
    CellId,
    CodingConfig,
    Factor,
    FactorKind,
    GeoPoint,
    WeightedFactorSet,
    cell_center,
    encode_cell,
    factorize,
    haversine_m,
    neighbor_cells,
)
from .values import (
    LearnerConfig,
    Transition,
    ValueTable,
    advantage,
    evaluate,
    restore,
    snapshot,
    td_update,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "BucketSample",
    "BurnConfig",
    "CandidateEdge",
    "CellId",
    "CodingConfig",
    "ConfigError",
    "DEFAULT_CONFIG",
    "DemandModel",
    "EffectEstimate",
    "Factor",
    "FactorKind",
    "FareParams",
    "FilterConfig",
    "GeoPoint",
    "InputError",
    "LearnerConfig",
    "MatchPlan",
    "MetricsLog",
    "RideMatchError",
    "RideRequest",
    "RunConfig",
    "ScenarioConfig",
    "SnapshotError",
    "SupplyModel",
    "SwitchbackPlan",
    "Transition",
    "ValueTable",
    "advantage",
    "build_edges",
    "cell_center",
    "compute_bucket_metrics",
    "encode_cell",
    "estimate_effects",
    "evaluate",
    "export_heatmap",
    "factorize",
    "greedy_assignment",
    "haversine_m",
    "load_config_file",
    "make_plan",
    "neighbor_cells",
    "restore",
    "run",
    "run_switchback",
    "snapshot",
    "solve_assignment",
    "td_update",
    "travel_time",
    "validate_config",
    "validate_plan",
]
