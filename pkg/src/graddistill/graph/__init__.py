"""Graph data model, dataset IO, inductive splitting and feature perturbation."""
from .core import (
    AGGREGATORS,
    Graph,
    InductivePartition,
    canonical_edges,
    make_inductive,
    perturb_features,
    sample_neighbors,
    transductive,
)
from .io import DatasetError, convert_npz, load_dataset, per_class_split, save_dataset
from .synthetic import planted_graph

__all__ = [
    "AGGREGATORS",
    "DatasetError",
    "Graph",
    "InductivePartition",
    "canonical_edges",
    "convert_npz",
    "load_dataset",
    "make_inductive",
    "per_class_split",
    "perturb_features",
    "planted_graph",
    "sample_neighbors",
    "save_dataset",
    "transductive",
]
