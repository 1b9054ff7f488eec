"""The standard synthetic suite: a small growing graph every mode can run in seconds."""

from .config import TrainConfig
from .graph import synth_growing_graph

# 6 classes, 2 per task -> 3 tasks
STANDARD_GRAPH = dict(n_classes=6, nodes_per_class=100, feature_dim=16,
                      intra_p=0.05, inter_p=0.005, class_sep=4.0)
STANDARD_TRAIN = dict(epochs=200, hidden=32, buffer_size=10, lr=0.005, classes_per_task=2)
SEEDS = (0, 1, 2, 3, 4)


def standard_graph(seed):
    return synth_growing_graph(**STANDARD_GRAPH, seed=seed)


def standard_config(mode="dmsg", seed=0, **overrides):
    return TrainConfig(**{**STANDARD_TRAIN, "mode": mode, "seed": seed, **overrides})
