"""Declarative task configs and a windowed query engine for event-stream cohorts."""

__version__ = "0.1.0"

from .config import (
    ANY_EVENT,
    BoundaryExpr,
    BoundaryKind,
    BoundDirection,
    ConfigError,
    ConstraintBound,
    DerivedPredicate,
    Duration,
    PlainPredicate,
    TaskConfig,
    WindowDef,
    load_task_config,
    parse_boundary_expr,
    parse_duration,
    parse_task_config,
    predicate_columns,
    predicate_dependency_order,
    serialize_task_config,
)
from .engine import (
    CohortRow,
    Realization,
    WindowSummary,
    check_constraints,
    cohort_frame,
    count_in_interval,
    extract_cohort,
    extract_subtree,
    find_trigger_anchors,
    resolve_event_bound_endpoint,
    resolve_temporal_endpoint,
)
from .ingest import (
    CohortSource,
    DataError,
    EventRecord,
    SubjectTimeline,
    build_timeline,
    evaluate_derived_predicate,
    evaluate_plain_predicate,
    load_cohort_source,
    load_direct_predicates,
    load_events,
    partition_source,
)
from .oracle import naive_extract
from .synth import SynthSpec, generate_events, generate_synthetic, write_events
from .tree import WindowTree, build_tree, traversal_order

__all__ = [
    "ANY_EVENT",
    "BoundDirection",
    "BoundaryExpr",
    "BoundaryKind",
    "CohortRow",
    "CohortSource",
    "ConfigError",
    "ConstraintBound",
    "DataError",
    "DerivedPredicate",
    "Duration",
    "EventRecord",
    "PlainPredicate",
    "Realization",
    "SubjectTimeline",
    "SynthSpec",
    "TaskConfig",
    "WindowDef",
    "WindowSummary",
    "WindowTree",
    "build_timeline",
    "build_tree",
    "check_constraints",
    "cohort_frame",
    "count_in_interval",
    "evaluate_derived_predicate",
    "evaluate_plain_predicate",
    "extract_cohort",
    "extract_subtree",
    "find_trigger_anchors",
    "generate_events",
    "generate_synthetic",
    "load_cohort_source",
    "load_direct_predicates",
    "load_events",
    "load_task_config",
    "naive_extract",
    "parse_boundary_expr",
    "parse_duration",
    "parse_task_config",
    "partition_source",
    "predicate_columns",
    "predicate_dependency_order",
    "resolve_event_bound_endpoint",
    "resolve_temporal_endpoint",
    "serialize_task_config",
    "traversal_order",
    "write_events",
]
