"""Sequential Monte Carlo sampling of redistricting plans on adjacency graphs."""
__version__ = "0.1.0"

from .constraints import (ConstraintSpec, DistrictPenalty, HardPredicate, IncumbentPairing, MaxRem,
                          SplitPenalty, StatusQuo)
from .enumerate import ReferenceSet, enumerate_partitions, reweight_reference
from .graph import Graph, GraphError, Labeling, Plan, build_graph, graph_from_json, graph_to_json
from .mcmc import MergeSplitParams, merge_split_step, run_chain
from .smc import (InfeasibleError, SMCError, SmcConfig, StageStarvedError, WeightedEnsemble,
                  final_log_weight, incremental_log_weight, resample_stage, run_smc, select_k,
                  truncate_weights)
from .splitter import SplitParams, population_bounds, split_district
from .ust import sample_hierarchical_ust, sample_ust


__all__ = [
    "ConstraintSpec", "DistrictPenalty", "HardPredicate", "IncumbentPairing", "MaxRem", "SplitPenalty",
    "StatusQuo", "ReferenceSet", "enumerate_partitions", "reweight_reference", "Graph", "GraphError",
    "Labeling", "Plan", "build_graph", "graph_from_json", "graph_to_json", "MergeSplitParams",
    "merge_split_step", "run_chain", "InfeasibleError", "SMCError", "SmcConfig", "StageStarvedError",
    "WeightedEnsemble", "final_log_weight", "incremental_log_weight", "resample_stage", "run_smc",
    "select_k", "truncate_weights", "SplitParams", "population_bounds", "split_district",
    "sample_hierarchical_ust", "sample_ust", "__version__",
]
