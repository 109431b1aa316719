"""Shared feature encoder, GraphSAGE teacher and graph-free student.

Parameters live in a flat ``ParamSet`` (name -> float64 array) with the
prefixes ``enc.``, ``tea.`` and ``stu.``. Forward functions take the same
names mapped to ``Tensor`` objects, either tape variables (training) or
constants (inference); see ``constants``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numeric as nm
from .graph import Graph
from .numeric import SparseMatrix, Tensor

ParamSet = dict[str, np.ndarray]
Weights = Mapping[str, Tensor]

MODES = ("train", "eval")


@dataclass(frozen=True)
class ModelConfig:
    n_dims: int
    n_classes: int
    hidden: int = 128
    encoder_layers: int = 1
    sage_layers: int = 2
    teacher_head_layers: int = 1
    student_head_layers: int = 1
    dropout: float = 0.0

    @property
    def embed_dim(self) -> int:
        return self.hidden if self.encoder_layers else self.n_dims


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _mlp_params(prefix: str, dims: Sequence[int], rng) -> ParamSet:
    out = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        out[f"{prefix}W{i}"] = glorot(rng, a, b)
        out[f"{prefix}b{i}"] = np.zeros((1, b))
    return out


def init_encoder(cfg: ModelConfig, rng: np.random.Generator) -> ParamSet:
    dims = [cfg.n_dims] + [cfg.hidden] * cfg.encoder_layers
    return _mlp_params("enc.", dims, rng)


def init_teacher(cfg: ModelConfig, rng: np.random.Generator) -> ParamSet:
    out = {}
    d = cfg.embed_dim
    for k in range(cfg.sage_layers):
        out[f"tea.self{k}"] = glorot(rng, d, cfg.hidden)
        out[f"tea.nbr{k}"] = glorot(rng, d, cfg.hidden)
        out[f"tea.b{k}"] = np.zeros((1, cfg.hidden))
        d = cfg.hidden
    out.update(_mlp_params("tea.head.", _head_dims(d, cfg.hidden, cfg.n_classes, cfg.teacher_head_layers), rng))
    return out


def init_student(cfg: ModelConfig, rng: np.random.Generator) -> ParamSet:
    dims = _head_dims(cfg.embed_dim, cfg.hidden, cfg.n_classes, cfg.student_head_layers)
    return _mlp_params("stu.head.", dims, rng)


def _head_dims(d_in, hidden, n_out, layers):
    if layers < 1:
        raise ValueError("a classifier head needs at least one layer")
    return [d_in] + [hidden] * (layers - 1) + [n_out]


def init_params(cfg: ModelConfig, rng: np.random.Generator,
                parts: Sequence[str] = ("enc", "tea", "stu")) -> ParamSet:
    builders = {"enc": init_encoder, "tea": init_teacher, "stu": init_student}
    params: ParamSet = {}
    for part in parts:
        params.update(builders[part](cfg, rng))
    return params


def constants(params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def select(params: Mapping, prefix: str) -> dict:
    return {k: v for k, v in params.items() if k.startswith(prefix)}


def copy_params(params: Mapping[str, np.ndarray]) -> ParamSet:
    return {k: v.copy() for k, v in params.items()}


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode == "train"


def _mlp(w: Weights, prefix: str, h: Tensor, n_layers: int, cfg, training, rng,
         final_activation: bool) -> Tensor:
    for i in range(n_layers):
        h = nm.add(nm.matmul(h, w[f"{prefix}W{i}"]), w[f"{prefix}b{i}"])
        if i < n_layers - 1 or final_activation:
            h = nm.dropout(nm.relu(h), cfg.dropout, rng, training)
    return h


def encode(w: Weights, features: SparseMatrix, cfg: ModelConfig, mode: str = "eval",
           rng: np.random.Generator | None = None) -> Tensor:
    """Node embeddings ``(N, embed_dim)`` from sparse features.

    With zero encoder layers the encoder is the identity on the features.
    """
    training = _check_mode(mode)
    if features.shape[1] != cfg.n_dims:
        raise ValueError(f"features have {features.shape[1]} dims, encoder expects {cfg.n_dims}")
    if cfg.encoder_layers == 0:
        return Tensor(features.to_dense())
    h = nm.add(nm.spmm(features, w["enc.W0"]), w["enc.b0"])
    h = nm.dropout(nm.relu(h), cfg.dropout, rng, training)
    for i in range(1, cfg.encoder_layers):
        h = nm.add(nm.matmul(h, w[f"enc.W{i}"]), w[f"enc.b{i}"])
        h = nm.dropout(nm.relu(h), cfg.dropout, rng, training)
    return h


def sage_layer(w: Weights, k: int, h: Tensor, adj: SparseMatrix) -> Tensor:
    """``relu(h W_self + A (h W_nbr) + b)``; ``A`` carries the aggregator."""
    own = nm.matmul(h, w[f"tea.self{k}"])
    agg = nm.spmm(adj, nm.matmul(h, w[f"tea.nbr{k}"]))
    return nm.relu(nm.add(nm.add(own, agg), w[f"tea.b{k}"]))


def teacher_forward(w: Weights, g: Graph, cfg: ModelConfig, mode: str = "eval",
                    rng: np.random.Generator | None = None,
                    adjacency: Sequence[SparseMatrix] | None = None) -> Tensor:
    """Teacher logits ``(N, m)``.

    ``adjacency`` optionally gives one propagation matrix per layer (sampled
    neighborhoods); by default every layer uses ``g.adjacency``.
    """
    training = _check_mode(mode)
    if adjacency is not None and len(adjacency) != cfg.sage_layers:
        raise ValueError(f"{len(adjacency)} adjacency layers for {cfg.sage_layers} SAGE layers")
    h = encode(w, g.features, cfg, mode, rng)
    for k in range(cfg.sage_layers):
        adj = g.adjacency if adjacency is None else adjacency[k]
        if adj.shape != (g.n_nodes, h.shape[0]):
            raise ValueError(f"adjacency {adj.shape} does not match {h.shape[0]} nodes")
        h = nm.dropout(sage_layer(w, k, h, adj), cfg.dropout, rng, training)
    return _mlp(w, "tea.head.", h, cfg.teacher_head_layers, cfg, training, rng, False)


def student_forward(w: Weights, features: SparseMatrix, cfg: ModelConfig, mode: str = "eval",
                    rng: np.random.Generator | None = None) -> Tensor:
    """Student logits ``(N, m)`` from features alone."""
    training = _check_mode(mode)
    h = encode(w, features, cfg, mode, rng)
    return _mlp(w, "stu.head.", h, cfg.student_head_layers, cfg, training, rng, False)


def save_checkpoint(params: Mapping[str, np.ndarray], path, config: ModelConfig | None = None) -> Path:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float64)."""
    path = Path(path)
    manifest = {"dtype": "<f8", "tensors": [], "config": asdict(config) if config else None}
    offset = 0
    with open(path.with_suffix(".bin"), "wb") as fh:
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            fh.write(arr.tobytes())
            manifest["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path.with_suffix(".json")


def load_checkpoint(path) -> tuple[ParamSet, ModelConfig | None]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    flat = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    params = {}
    for t in manifest["tensors"]:
        size = int(np.prod(t["shape"]))
        chunk = flat[t["offset"]:t["offset"] + size]
        if len(chunk) != size:
            raise ValueError(f"checkpoint truncated at {t['name']}")
        params[t["name"]] = chunk.reshape(t["shape"]).astype(np.float64)
    cfg = ModelConfig(**manifest["config"]) if manifest.get("config") else None
    return params, cfg
