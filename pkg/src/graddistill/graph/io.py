"""Dataset directory format and converters.

A dataset directory holds five UTF-8 files with LF line endings::

    edges.tsv     src<TAB>dst            (0-based, undirected)
    features.tsv  node<TAB>dim<TAB>value
    labels.tsv    node<TAB>class
    splits.tsv    node<TAB>{train|val|test}
    meta.json     {"n_nodes": N, "n_dims": D, "n_classes": m, ...}
"""
from __future__ import annotations

import json
import logging
import warnings
from pathlib import Path

import numpy as np

from ..numeric import SparseMatrix
from .core import SPLITS, Graph

log = logging.getLogger(__name__)

FILES = ("edges.tsv", "features.tsv", "labels.tsv", "splits.tsv", "meta.json")


class DatasetError(ValueError):
    pass


def _read_tsv(path: Path, n_cols: int) -> list[list[str]]:
    rows = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != n_cols:
                raise DatasetError(f"{path.name}:{lineno}: expected {n_cols} fields, got {len(parts)}")
            rows.append(parts)
    return rows


def _ints(rows, col, path, n, what):
    try:
        vals = np.array([int(r[col]) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise DatasetError(f"{path}: non-integer {what}: {exc}") from None
    if len(vals) and (vals.min() < 0 or vals.max() >= n):
        raise DatasetError(f"{path}: {what} out of range [0, {n})")
    return vals


def load_dataset(dir_path, aggregator: str = "mean") -> Graph:
    root = Path(dir_path)
    for name in FILES:
        if not (root / name).is_file():
            raise FileNotFoundError(f"dataset file missing: {root / name}")
    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    try:
        n, d, m = int(meta["n_nodes"]), int(meta["n_dims"]), int(meta["n_classes"])
    except KeyError as exc:
        raise DatasetError(f"meta.json lacks {exc}") from None

    erows = _read_tsv(root / "edges.tsv", 2)
    src = _ints(erows, 0, "edges.tsv", n, "node id")
    dst = _ints(erows, 1, "edges.tsv", n, "node id")

    frows = _read_tsv(root / "features.tsv", 3)
    fn = _ints(frows, 0, "features.tsv", n, "node id")
    fd = _ints(frows, 1, "features.tsv", d, "feature dim")
    fv = np.array([float(r[2]) for r in frows], dtype=np.float64)
    try:
        feats = SparseMatrix((n, d), fn, fd, fv)
    except ValueError as exc:
        raise DatasetError(f"features.tsv: {exc}") from None
    empty = int(np.sum(np.diff(feats.indptr) == 0))
    if empty:
        warnings.warn(f"{empty} node(s) have no features; using zero rows", stacklevel=2)

    lrows = _read_tsv(root / "labels.tsv", 2)
    ln = _ints(lrows, 0, "labels.tsv", n, "node id")
    lc = _ints(lrows, 1, "labels.tsv", m, "label")
    labels = np.full(n, -1, dtype=np.int64)
    labels[ln] = lc
    if (labels < 0).any():
        raise DatasetError(f"labels.tsv: {int((labels < 0).sum())} node(s) unlabeled")

    srows = _read_tsv(root / "splits.tsv", 2)
    sn = _ints(srows, 0, "splits.tsv", n, "node id")
    splits = {k: np.zeros(n, bool) for k in SPLITS}
    for node, r in zip(sn, srows):
        name = r[1].strip()
        if name not in splits:
            raise DatasetError(f"splits.tsv: unknown split {name!r}")
        splits[name][node] = True

    extra = {k: v for k, v in meta.items() if k not in ("n_nodes", "n_dims", "n_classes")}
    try:
        return Graph(n, np.c_[src, dst], feats, labels, m, splits, aggregator=aggregator, meta=extra)
    except ValueError as exc:
        raise DatasetError(str(exc)) from None


def save_dataset(g: Graph, dir_path, **extra_meta) -> Path:
    """Write ``g`` in the directory format; returns the directory."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u}\t{v}\n" for u, v in g.edges.tolist())
    r, c, v = g.features.triplets()
    with open(root / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{a}\t{b}\t{x!r}\n" for a, b, x in zip(r.tolist(), c.tolist(), v.tolist()))
    with open(root / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{i}\t{y}\n" for i, y in enumerate(g.labels.tolist()))
    split_of = {}
    for name in SPLITS:
        for i in g.nodes(name).tolist():
            split_of[i] = name
    with open(root / "splits.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{i}\t{split_of[i]}\n" for i in sorted(split_of))
    meta = {"n_nodes": g.n_nodes, "n_dims": g.n_dims, "n_classes": g.n_classes}
    meta.update(g.meta)
    meta.update(extra_meta)
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return root


def per_class_split(labels: np.ndarray, n_classes: int, train_per_class: int,
                    val_per_class: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Random ``train_per_class`` / ``val_per_class`` nodes per class; the rest is test."""
    n = len(labels)
    splits = {k: np.zeros(n, bool) for k in SPLITS}
    for cls in range(n_classes):
        members = rng.permutation(np.flatnonzero(labels == cls))
        if len(members) < train_per_class + val_per_class:
            raise DatasetError(f"class {cls} has only {len(members)} nodes")
        splits["train"][members[:train_per_class]] = True
        splits["val"][members[train_per_class:train_per_class + val_per_class]] = True
    splits["test"] = ~(splits["train"] | splits["val"])
    return splits


def convert_npz(npz_path, seed: int = 0, train_per_class: int = 20,
                val_per_class: int = 30, largest_component: bool = True) -> Graph:
    """Read a CSR-packed ``.npz`` graph (adj_*/attr_*/labels keys).

    This is the layout of the public Cora/Citeseer/Pubmed/Amazon bag-of-words
    releases. The graph is symmetrized, binarized and stripped of self-loops;
    by default only its largest connected component is kept, then nodes are
    split per class.
    """
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components

    with np.load(npz_path, allow_pickle=True) as z:
        def csr(prefix):
            return sp.csr_matrix((z[f"{prefix}_data"], z[f"{prefix}_indices"], z[f"{prefix}_indptr"]),
                                 shape=tuple(z[f"{prefix}_shape"]))

        adj = csr("adj")
        attr = csr("attr") if "attr_data" in z else sp.csr_matrix(z["attr_matrix"])
        if "labels" in z:
            labels = np.asarray(z["labels"]).astype(np.int64)
        else:
            labels = np.asarray(csr("labels").argmax(axis=1)).ravel().astype(np.int64)

    adj = ((adj + adj.T) > 0).astype(np.float64).tolil()
    adj.setdiag(0)
    adj = adj.tocsr()
    adj.eliminate_zeros()
    keep = np.arange(adj.shape[0])
    if largest_component:
        _, comp = connected_components(adj, directed=False)
        keep = np.flatnonzero(comp == np.bincount(comp).argmax())
    adj = adj[keep][:, keep].tocoo()
    attr = attr[keep].tocoo()
    labels = labels[keep]
    _, labels = np.unique(labels, return_inverse=True)
    m = int(labels.max()) + 1
    n = len(keep)
    edges = np.c_[adj.row, adj.col]
    feats = SparseMatrix((n, attr.shape[1]), attr.row, attr.col, attr.data)
    splits = per_class_split(labels, m, train_per_class, val_per_class, np.random.default_rng(seed))
    log.info("converted %s: %d nodes, %d classes", npz_path, n, m)
    return Graph(n, edges, feats, labels, m, splits, meta={"source": Path(npz_path).name, "split_seed": seed})
