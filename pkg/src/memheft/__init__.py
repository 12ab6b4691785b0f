"""Memory-aware list scheduling of workflow DAGs on heterogeneous clusters."""

from .cluster import Cluster, Processor, reference_cluster
from .ranking import RankPolicy, min_memory_order, rank_tasks, sequential_peak
from .scheduler import EvictionPolicy, Schedule, SchedulingFailure, heft_schedule, heftm_schedule
from .simulator import DeviationModel, sample_actuals, simulate_no_recompute, simulate_with_recompute
from .validator import memory_usage, validate
from .workflow import Workflow, generate_synthetic, memory_requirement, parse_workflow

__version__ = "0.1.0"

__all__ = [
    "Cluster", "Processor", "reference_cluster",
    "RankPolicy", "min_memory_order", "rank_tasks", "sequential_peak",
    "EvictionPolicy", "Schedule", "SchedulingFailure", "heft_schedule", "heftm_schedule",
    "DeviationModel", "sample_actuals", "simulate_no_recompute", "simulate_with_recompute",
    "memory_usage", "validate",
    "Workflow", "generate_synthetic", "memory_requirement", "parse_workflow",
]
