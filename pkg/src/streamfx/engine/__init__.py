"""Dataflow core: schemas, tuples, operators, graphs and their execution."""

from .graph import (DataflowGraph, Edge, GraphValidationError, OperatorNode, Pipeline,
                    ValidationIssue, build_graph, load_description)
from .operators import (OPERATOR_KINDS, ConfigError, Operator, OperatorStats, UserOperator,
                        register_predicate, register_transform, register_user_operator)
from .runtime import (DEFAULT_QUEUE_CAPACITY, Controller, Job, JobFailedError, JobResult, JobState,
                      run_concurrent, run_deterministic)
from .schema import (CHANNEL_DATA, POWER_SPECTRUM_DATA, RAW_DATA, RAW_DATA_CHUNK, Attribute, AttrType,
                     Schema, SchemaError, Tuple)
from .stats import EdgeStats, JobStats, parse_stats_report
from .windows import WindowSpec

__all__ = [
    "Attribute", "AttrType", "CHANNEL_DATA", "ConfigError", "Controller", "DEFAULT_QUEUE_CAPACITY",
    "DataflowGraph", "Edge", "EdgeStats", "GraphValidationError", "Job", "JobFailedError", "JobResult",
    "JobState", "JobStats", "OPERATOR_KINDS", "Operator", "OperatorNode", "OperatorStats", "POWER_SPECTRUM_DATA",
    "Pipeline", "RAW_DATA", "RAW_DATA_CHUNK", "Schema", "SchemaError", "Tuple", "UserOperator",
    "ValidationIssue", "WindowSpec", "build_graph", "load_description", "parse_stats_report",
    "register_predicate", "register_transform", "register_user_operator", "run_concurrent",
    "run_deterministic",
]
