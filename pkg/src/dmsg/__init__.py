"""Class-incremental node classification with diversified memory selection and generative replay."""

from .config import TrainConfig
from .graph import GrowingGraphSource, load_graph, partition_tasks, snapshot_at, synth_growing_graph
from .suite import standard_config, standard_graph
from .trainer import ExperimentResult, aa_af, run_sequence

__version__ = "0.1.0"

__all__ = [
    "ExperimentResult",
    "GrowingGraphSource",
    "TrainConfig",
    "aa_af",
    "load_graph",
    "partition_tasks",
    "run_sequence",
    "snapshot_at",
    "standard_config",
    "standard_graph",
    "synth_growing_graph",
]
