"""Seeded synthetic bag-of-words graphs with planted classes."""
from __future__ import annotations

import numpy as np

from ..numeric import SparseMatrix
from .core import Graph
from .io import per_class_split


def planted_graph(n_nodes: int = 200, n_classes: int = 2, n_dims: int = 40,
                  avg_degree: float = 4.0, homophily: float = 0.9,
                  words_per_node: int = 6, signal: float = 0.6,
                  train_per_class: int = 5, val_per_class: int = 10,
                  seed: int = 0, aggregator: str = "mean") -> Graph:
    """Citation-style graph: class topics drive both words and links.

    Each class owns a disjoint block of ``n_dims // n_classes`` words. A
    node draws ``words_per_node`` words, each from its class block with
    probability ``signal`` and uniformly from the vocabulary otherwise
    (binary features). Each node starts ``avg_degree / 2`` links, landing on
    a same-class node with probability ``homophily``.
    """
    if n_dims < n_classes:
        raise ValueError("need at least one word per class")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_nodes) % n_classes)
    block = n_dims // n_classes

    own = rng.random((n_nodes, words_per_node)) < signal
    topical = labels[:, None] * block + rng.integers(0, block, (n_nodes, words_per_node))
    noise = rng.integers(0, n_dims, (n_nodes, words_per_node))
    words = np.where(own, topical, noise)
    rows = np.repeat(np.arange(n_nodes), words_per_node)
    pairs = np.unique(np.c_[rows, words.ravel()], axis=0)
    feats = SparseMatrix((n_nodes, n_dims), pairs[:, 0], pairs[:, 1], np.ones(len(pairs)))

    by_class = [np.flatnonzero(labels == c) for c in range(n_classes)]
    n_links = max(1, int(round(avg_degree / 2)))
    src = np.repeat(np.arange(n_nodes), n_links)
    same = rng.random(len(src)) < homophily
    dst = rng.integers(0, n_nodes, len(src))
    for c in range(n_classes):
        pick = same & (labels[src] == c)
        dst[pick] = rng.choice(by_class[c], size=int(pick.sum()))
    splits = per_class_split(labels, n_classes, train_per_class, val_per_class, rng)
    return Graph(n_nodes, np.c_[src, dst], feats, labels, n_classes, splits,
                 aggregator=aggregator, meta={"synthetic": True, "seed": seed})
