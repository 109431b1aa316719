"""Graph data model and structural transforms."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np

from ..numeric import SparseMatrix
from ..numeric.kernels import csr_row_sample

AGGREGATORS = ("mean", "sum")
SPLITS = ("train", "val", "test")


def canonical_edges(edges, n_nodes: int) -> np.ndarray:
    """Undirected edge list as sorted unique ``(u, v)`` rows with ``u < v``.

    Reverse duplicates collapse and self-loops are dropped.
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) and (e.min() < 0 or e.max() >= n_nodes):
        raise ValueError(f"edge endpoint out of range for {n_nodes} nodes")
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    if len(e) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


def neighbor_matrix(n_nodes: int, edges: np.ndarray) -> SparseMatrix:
    """Symmetric 0/1 adjacency without self-loops."""
    rows = np.r_[edges[:, 0], edges[:, 1]]
    cols = np.r_[edges[:, 1], edges[:, 0]]
    return SparseMatrix((n_nodes, n_nodes), rows, cols, np.ones(len(rows)))


def with_self_loops(nbrs: SparseMatrix, active: np.ndarray, aggregator: str) -> SparseMatrix:
    """Add one self-loop per active node, then normalize for ``aggregator``."""
    if aggregator not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {aggregator!r}; expected one of {AGGREGATORS}")
    r, c, v = nbrs.triplets()
    loops = np.flatnonzero(active)
    adj = SparseMatrix(nbrs.shape, np.r_[r, loops], np.r_[c, loops], np.r_[v, np.ones(len(loops))])
    return adj.row_normalize() if aggregator == "mean" else adj


@dataclass(frozen=True, eq=False)
class Graph:
    """Node-classification graph with bag-of-words features.

    ``observed`` marks the nodes visible at training time; unobserved nodes
    keep their id, features and label but have no edges and no self-loop.
    """

    n_nodes: int
    edges: np.ndarray
    features: SparseMatrix
    labels: np.ndarray
    n_classes: int
    splits: Mapping[str, np.ndarray]
    aggregator: str = "mean"
    observed: np.ndarray | None = None
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        n = self.n_nodes
        object.__setattr__(self, "edges", canonical_edges(self.edges, n))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        obs = np.ones(n, bool) if self.observed is None else np.asarray(self.observed, bool)
        object.__setattr__(self, "observed", obs)
        splits = {k: np.asarray(v, bool) for k, v in self.splits.items()}
        for k in SPLITS:
            splits.setdefault(k, np.zeros(n, bool))
        object.__setattr__(self, "splits", splits)
        if self.features.shape[0] != n:
            raise ValueError(f"features have {self.features.shape[0]} rows for {n} nodes")
        if self.labels.shape != (n,):
            raise ValueError(f"labels have shape {self.labels.shape}, expected ({n},)")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")
        if obs.shape != (n,):
            raise ValueError("observed mask has the wrong length")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        masks = list(splits.values())
        for mask in masks:
            if mask.shape != (n,):
                raise ValueError("split mask has the wrong length")
        total = np.sum([m.astype(int) for m in masks], axis=0) if masks else 0
        if np.any(total > 1):
            raise ValueError("split masks overlap")
        if len(self.edges) and not (obs[self.edges[:, 0]].all() and obs[self.edges[:, 1]].all()):
            raise ValueError("edge touches an unobserved node")

    @property
    def n_dims(self) -> int:
        return self.features.shape[1]

    def mask(self, name: str) -> np.ndarray:
        return self.splits[name]

    def nodes(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.splits[name])

    @cached_property
    def neighbors(self) -> SparseMatrix:
        return neighbor_matrix(self.n_nodes, self.edges)

    @cached_property
    def adjacency(self) -> SparseMatrix:
        """Propagation matrix with self-loops, normalized per ``aggregator``."""
        return with_self_loops(self.neighbors, self.observed, self.aggregator)

    def degree(self) -> np.ndarray:
        return np.diff(self.neighbors.indptr)

    def with_aggregator(self, aggregator: str) -> "Graph":
        return replace(self, aggregator=aggregator)

    def with_features(self, features: SparseMatrix, **meta) -> "Graph":
        return replace(self, features=features, meta={**self.meta, **meta})

    def normalized_features(self) -> "Graph":
        """Copy with L1 row-normalized features."""
        return self.with_features(self.features.row_normalize())


@dataclass(frozen=True, eq=False)
class InductivePartition:
    full_graph: Graph
    observed_graph: Graph
    inductive_nodes: np.ndarray
    transductive_test_nodes: np.ndarray
    inductive_val_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def rate(self) -> float:
        n_test = len(self.inductive_nodes) + len(self.transductive_test_nodes)
        return len(self.inductive_nodes) / n_test if n_test else 0.0


def transductive(g: Graph) -> InductivePartition:
    return make_inductive(g, 0.0, np.random.default_rng(0))


def _sample(nodes: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    k = math.floor(rate * len(nodes))
    if k == 0:
        return np.zeros(0, np.int64)
    return np.sort(rng.choice(nodes, size=k, replace=False))


def make_inductive(g: Graph, rate: float, rng: np.random.Generator,
                   holdout_val: bool = False) -> InductivePartition:
    """Withhold ``floor(rate * |test|)`` random test nodes and their edges.

    With ``holdout_val`` the same fraction of validation nodes is withheld
    too; those are dropped from the observed validation split.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"inductive rate must lie in [0, 1), got {rate}")
    test = g.nodes("test")
    ind = _sample(test, rate, rng)
    ind_val = _sample(g.nodes("val"), rate, rng) if holdout_val else np.zeros(0, np.int64)
    hidden = np.zeros(g.n_nodes, bool)
    hidden[ind] = True
    hidden[ind_val] = True
    if not hidden.any():
        observed = g
    else:
        e = g.edges
        keep = ~(hidden[e[:, 0]] | hidden[e[:, 1]])
        splits = {k: v & ~hidden for k, v in g.splits.items()}
        observed = replace(g, edges=e[keep], splits=splits, observed=g.observed & ~hidden)
    tran = test[~hidden[test]]
    return InductivePartition(g, observed, ind, tran, ind_val)


def sample_neighbors(g: Graph, layer_count: int = 2, fanout: int = 5,
                     rng: np.random.Generator | None = None) -> list[SparseMatrix]:
    """Per-layer propagation matrices over sampled neighborhoods.

    Each node keeps up to ``fanout`` neighbors drawn uniformly without
    replacement (all of them when its degree is at most ``fanout``), plus
    its self-loop; normalization follows the graph's aggregator.
    """
    if fanout < 1:
        raise ValueError("fanout must be at least 1")
    rng = rng or np.random.default_rng()
    nb = g.neighbors
    rows = nb.rows
    layers = []
    for _ in range(layer_count):
        keep = csr_row_sample(nb.indptr, rng.random(nb.nnz), fanout)
        sub = SparseMatrix(nb.shape, rows[keep], nb.indices[keep], nb.data[keep])
        layers.append(with_self_loops(sub, g.observed, g.aggregator))
    return layers


def perturb_features(g: Graph, rng: np.random.Generator | None = None,
                     partner: np.ndarray | None = None) -> Graph:
    """Replace the trailing half of each node's feature vector with a random node's.

    The first ``ceil(D / 2)`` coordinates stay as they are. ``partner[i]``
    names the node whose tail node ``i`` receives; it is drawn uniformly
    from ``rng`` when not given.
    """
    d = g.n_dims
    if d < 2:
        raise ValueError(f"feature dimension {d} is too small to perturb")
    keep_dims = math.ceil(d / 2)
    if partner is None:
        if rng is None:
            raise ValueError("perturb_features needs rng or partner")
        partner = rng.integers(0, g.n_nodes, size=g.n_nodes)
    partner = np.asarray(partner, dtype=np.int64)
    if partner.shape != (g.n_nodes,) or (g.n_nodes and (partner.min() < 0 or partner.max() >= g.n_nodes)):
        raise ValueError("partner must hold one valid node id per node")
    r, c, v = g.features.triplets()
    head = c < keep_dims
    # tail of node i comes from partner[i]: pull partner rows' tail entries
    tail_src = ~head
    by_row = np.split(np.flatnonzero(tail_src), np.searchsorted(r[tail_src], np.arange(1, g.n_nodes)))
    tail_idx = [by_row[p] for p in partner]
    counts = np.array([len(t) for t in tail_idx], dtype=np.int64)
    src = np.concatenate(tail_idx) if tail_idx else np.zeros(0, np.int64)
    new_r = np.r_[r[head], np.repeat(np.arange(g.n_nodes), counts)]
    new_c = np.r_[c[head], c[src]]
    new_v = np.r_[v[head], v[src]]
    feats = SparseMatrix(g.features.shape, new_r, new_c, new_v)
    return g.with_features(feats, perturbed=True)
