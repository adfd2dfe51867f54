"""mobix: speed-partitioned in-memory indexing for moving objects."""

from .core import (KnnQuery, Mbr, MovingObject, RangeQuery, SpeedDomain,
                   TimeParamRect, TemporalOrderError, default_space,
                   eval_rect, predicted_pos)
from .expansion import ExpansionParams, RangeExpansion, node_side, nu, \
    range_expansion, speed_probs
from .uniformity import LayerForest, QuadNode, UniformRegion, build_layers, \
    chi_square_uniform, merge, merged_regions
from .partitioner import (PartitionPlan, assign_partition, brute_force_partition,
                          compute_plan, optimal_partition, plan_from_json,
                          plan_to_json)
from .bx_index import BxConfig, BxTree, z_encode
from .tpr_index import TprConfig, TprTree, integral_area
from .controller import PartitionedIndex
from .traffic import RoadNetwork, TrafficSim, grid_network, load_network
from .bench import BenchConfig, MetricsReport, run_workload

__version__ = "0.1.0"

__all__ = [
    "KnnQuery", "Mbr", "MovingObject", "RangeQuery", "SpeedDomain",
    "TimeParamRect", "TemporalOrderError", "default_space", "eval_rect",
    "predicted_pos",
    "ExpansionParams", "RangeExpansion", "node_side", "nu", "range_expansion",
    "speed_probs",
    "LayerForest", "QuadNode", "UniformRegion", "build_layers",
    "chi_square_uniform", "merge", "merged_regions",
    "PartitionPlan", "assign_partition", "brute_force_partition",
    "compute_plan", "optimal_partition", "plan_from_json", "plan_to_json",
    "BxConfig", "BxTree", "z_encode",
    "TprConfig", "TprTree", "integral_area",
    "PartitionedIndex",
    "RoadNetwork", "TrafficSim", "grid_network", "load_network",
    "BenchConfig", "MetricsReport", "run_workload",
]
