"""Sparse memory networks: state lumping, map equation clustering and
cross-validated model size selection."""

from ._core import (
    Dendrograms,
    FlowlumpError,
    ModuleMap,
    PathCorpus,
    SparseModel,
    StateNetwork,
    codelength,
    cross_validate,
    export_json,
    flow_persistence,
    optimize,
    overlap_table,
    synthesize,
)

__all__ = [
    "Dendrograms",
    "FlowlumpError",
    "ModuleMap",
    "PathCorpus",
    "SparseModel",
    "StateNetwork",
    "codelength",
    "cross_validate",
    "export_json",
    "flow_persistence",
    "optimize",
    "overlap_table",
    "synthesize",
]
__version__ = "0.1.0"
