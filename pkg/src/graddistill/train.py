"""Optimization, model selection and the transductive/inductive protocol."""
from __future__ import annotations

import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import distill
from . import models as md
from .graph import Graph, InductivePartition, make_inductive, sample_neighbors, transductive
from .numeric import NumericalError, Tape, Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(NumericalError):
    """Loss or activations became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "joint"
    alpha: float = 0.2
    lam: float = 20.0
    lr: float = 1e-3
    weight_decay: float = 5e-5
    dropout: float = 0.0
    max_epochs: int = 500
    patience: int = 50
    seed: int = 0
    aggregator: str = "mean"
    eval_every: int = 1
    hidden: int = 128
    encoder_layers: int = 1
    sage_layers: int = 2
    teacher_head_layers: int = 1
    student_head_layers: int = 1
    stage2_epochs: int = 5
    sampled: bool = False
    fanout: int = 5
    temperature: float = 1.0
    normalize_features: bool = True
    # ablation: stop KL gradients into the teacher under ``joint``
    joint_detach_teacher: bool = False

    def __post_init__(self):
        self.strategy_config  # validates strategy, alpha, lambda
        if self.lr <= 0 or self.max_epochs <= 0:
            raise ValueError("lr and max_epochs must be positive")
        if not 0 < self.patience <= self.max_epochs:
            raise ValueError("patience must lie in (0, max_epochs]")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def strategy_config(self) -> distill.StrategyConfig:
        return distill.StrategyConfig(self.strategy, self.alpha, self.lam,
                                      self.stage2_epochs, self.temperature)

    def model_config(self, g: Graph) -> md.ModelConfig:
        return md.ModelConfig(g.n_dims, g.n_classes, self.hidden, self.encoder_layers,
                              self.sage_layers, self.teacher_head_layers,
                              self.student_head_layers, self.dropout)


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)


def adam_step(params: dict, grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, weight_decay: float = 0.0):
    """One Adam update of every parameter named in ``grads`` (in place).

    Weight decay enters as an L2 term added to the gradient. Step counts are
    kept per parameter, so parameters updated at different cadences get
    their own bias correction.
    """
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if weight_decay:
            g = g + weight_decay * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.t[name] = 0
        state.t[name] += 1
        t = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------- metrics


def accuracy(logits: np.ndarray, labels: np.ndarray, nodes) -> float | None:
    """Fraction of ``nodes`` whose label attains the row maximum.

    A row whose maximum is shared by k classes earns 1/k when the label is
    among them, i.e. the expected accuracy under random tie-breaking.
    ``None`` when ``nodes`` is empty.
    """
    nodes = np.asarray(nodes)
    if nodes.dtype == bool:
        nodes = np.flatnonzero(nodes)
    if len(nodes) == 0:
        return None
    z = logits[nodes]
    top = z == z.max(axis=1, keepdims=True)
    hit = top[np.arange(len(nodes)), labels[nodes]]
    return float(np.sum(hit / top.sum(axis=1)) / len(nodes))


class EvalResult(NamedTuple):
    tran_acc: float | None
    ind_acc: float | None
    full_acc: float | None
    delta_acc: float | None


def evaluate(student: Mapping[str, np.ndarray], partition: InductivePartition,
             model_cfg: md.ModelConfig) -> EvalResult:
    """Student accuracy on transductive, inductive and all test nodes.

    ``delta_acc`` is the relative change ``(ind - full) / full``.
    """
    g = partition.full_graph
    logits = md.student_forward(md.constants(student), g.features, model_cfg).data
    return evaluate_logits(logits, partition)


def evaluate_logits(logits: np.ndarray, partition: InductivePartition) -> EvalResult:
    labels = partition.full_graph.labels
    tran = accuracy(logits, labels, partition.transductive_test_nodes)
    ind = accuracy(logits, labels, partition.inductive_nodes)
    full = accuracy(logits, labels, partition.full_graph.nodes("test"))
    delta = None
    if ind is not None and full:
        delta = (ind - full) / full
    return EvalResult(tran, ind, full, delta)


# ---------------------------------------------------------------- results


@dataclass
class RunResult:
    config: dict
    history: list
    best_stage: str
    best_epoch: int
    best_val_acc: float
    tran_test: float | None
    ind_test: float | None
    full_test: float | None
    delta_acc: float | None
    teacher: dict | None = None
    wall_seconds: float = 0.0
    params: dict | None = field(default=None, repr=False, compare=False)
    model_config: md.ModelConfig | None = field(default=None, repr=False, compare=False)

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {k: getattr(self, k) for k in (
            "config", "history", "best_stage", "best_epoch", "best_val_acc", "tran_test",
            "ind_test", "full_test", "delta_acc", "teacher")}
        if include_timing:
            out["wall_seconds"] = self.wall_seconds
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- training loops


def prepare(data: Graph | InductivePartition, cfg: TrainConfig) -> InductivePartition:
    """Apply aggregator and feature normalization to both graphs of a partition."""
    part = transductive(data) if isinstance(data, Graph) else data

    def fix(g: Graph) -> Graph:
        g = g.with_aggregator(cfg.aggregator)
        return g.normalized_features() if cfg.normalize_features else g

    full = fix(part.full_graph)
    obs = full
    if part.observed_graph is not part.full_graph:
        obs = replace(part.observed_graph.with_aggregator(cfg.aggregator), features=full.features)
    return replace(part, full_graph=full, observed_graph=obs)


class _Context:
    """Per-run state: graph, masks, model shape and independent RNG streams."""

    def __init__(self, part: InductivePartition, cfg: TrainConfig):
        self.cfg = cfg
        self.part = part
        self.g = part.observed_graph
        self.labels = self.g.labels
        self.train = self.g.mask("train")
        self.val = self.g.mask("val")
        self.kl_mask = self.g.observed
        if not self.train.any() or not self.val.any():
            raise ValueError("train and validation masks must be non-empty")
        self.mcfg = cfg.model_config(self.g)
        init_ss, drop_ss, sample_ss = np.random.SeedSequence(cfg.seed).spawn(3)
        self.init_rng = np.random.default_rng(init_ss)
        self.drop_rng = np.random.default_rng(drop_ss)
        self.sample_rng = np.random.default_rng(sample_ss)
        self.history: list[dict] = []

    def adjacency(self):
        if not self.cfg.sampled:
            return None
        return sample_neighbors(self.g, self.mcfg.sage_layers, self.cfg.fanout, self.sample_rng)

    def teacher(self, w, mode="train"):
        adj = self.adjacency() if mode == "train" else None
        return md.teacher_forward(w, self.g, self.mcfg, mode, self.drop_rng, adj)

    def student(self, w, mode="train"):
        return md.student_forward(w, self.g.features, self.mcfg, mode, self.drop_rng)

    def teacher_eval(self, params) -> Tensor:
        return md.teacher_forward(md.constants(params), self.g, self.mcfg)

    def student_eval(self, params) -> Tensor:
        return md.student_forward(md.constants(params), self.g.features, self.mcfg)

    def val_acc(self, logits: Tensor) -> float:
        return accuracy(logits.data, self.labels, self.val)


def _descend(params: dict, loss_fn: Callable[[dict], Tensor], opt: AdamState,
             cfg: TrainConfig) -> float:
    tape = Tape()
    w = tape.watch(params)
    loss = loss_fn(w)
    names = list(w)
    grads = tape.gradient(loss, [w[k] for k in names])
    adam_step(params, dict(zip(names, grads)), opt, cfg.lr, cfg.weight_decay)
    return loss.item()


def _optimize(ctx: _Context, stage: str, params: dict, step: Callable[[], float],
              score: Callable[[dict], float], max_epochs: int, patience: int,
              start: tuple[float, dict] | None = None):
    """Run ``step`` per epoch with early stopping on ``score``.

    Returns ``(best_score, best_epoch, best_params)``; epoch 0 denotes
    ``start`` (a pre-existing snapshot) when given.
    """
    if start is None:
        best_score, best_epoch, best = -math.inf, 0, md.copy_params(params)
    else:
        best_score, best_epoch, best = start[0], 0, md.copy_params(start[1])
    for epoch in range(1, max_epochs + 1):
        evaluate_now = not (epoch % ctx.cfg.eval_every and epoch != max_epochs)
        try:
            loss = step()
            acc = score(params) if evaluate_now else None
        except NumericalError as exc:
            raise TrainingDiverged(
                f"{stage}: non-finite values at epoch {epoch} "
                f"(strategy={ctx.cfg.strategy}, lr={ctx.cfg.lr}): {exc}") from exc
        if not math.isfinite(loss):
            raise TrainingDiverged(f"{stage}: loss is {loss} at epoch {epoch}")
        if acc is None:
            ctx.history.append({"stage": stage, "epoch": epoch, "train_loss": loss, "val_acc": None})
            continue
        ctx.history.append({"stage": stage, "epoch": epoch, "train_loss": loss, "val_acc": acc})
        if acc >= best_score:  # ties go to the later, longer-trained snapshot
            best_score, best_epoch, best = acc, epoch, md.copy_params(params)
        elif epoch - best_epoch >= patience:
            break
    return best_score, best_epoch, best


def _fit_teacher(ctx: _Context, stage: str = "teacher"):
    cfg = ctx.cfg
    params = md.init_params(ctx.mcfg, ctx.init_rng, ("enc", "tea"))
    opt = AdamState()

    def step():
        return _descend(params, lambda w: distill.loss_nc(ctx.teacher(w), ctx.labels, ctx.train), opt, cfg)

    return _optimize(ctx, stage, params, step, lambda p: ctx.val_acc(ctx.teacher_eval(p)),
                     cfg.max_epochs, cfg.patience)


def _fit_student_kd(ctx: _Context, params: dict, teacher_logits: Tensor, stage: str,
                    max_epochs: int, start=None):
    cfg = ctx.cfg

    def loss(w):
        return distill.loss_kd(ctx.student(w), teacher_logits, ctx.labels, ctx.train,
                               ctx.kl_mask, cfg.lam, cfg.temperature)

    opt = AdamState()
    return _optimize(ctx, stage, params, lambda: _descend(params, loss, opt, cfg),
                     lambda p: ctx.val_acc(ctx.student_eval(p)), max_epochs,
                     min(cfg.patience, max_epochs), start)


def _fit_joint(ctx: _Context):
    cfg = ctx.cfg
    params = md.init_params(ctx.mcfg, ctx.init_rng)
    opt = AdamState()

    def loss(w):
        return distill.loss_joint(ctx.student(w), ctx.teacher(w), ctx.labels, ctx.train,
                                  ctx.kl_mask, cfg.alpha, cfg.lam, cfg.temperature,
                                  cfg.joint_detach_teacher)

    return _optimize(ctx, "joint", params, lambda: _descend(params, loss, opt, cfg),
                     lambda p: ctx.val_acc(ctx.student_eval(p)), cfg.max_epochs, cfg.patience)


def _fit_alt(ctx: _Context):
    cfg = ctx.cfg
    params = md.init_params(ctx.mcfg, ctx.init_rng)
    opt = AdamState()

    def step():
        t_params = {k: v for k, v in params.items() if not k.startswith("stu.")}
        t_loss = _descend(t_params, lambda w: distill.t_step(ctx.teacher(w), ctx.labels, ctx.train),
                          opt, cfg)
        target = ctx.teacher_eval(params)
        s_params = {k: v for k, v in params.items() if not k.startswith("tea.")}
        s_loss = _descend(s_params, lambda w: distill.s_step(
            ctx.student(w), target, ctx.labels, ctx.train, ctx.kl_mask, cfg.lam, cfg.temperature),
            opt, cfg)
        return t_loss + s_loss

    return _optimize(ctx, "alt", params, step, lambda p: ctx.val_acc(ctx.student_eval(p)),
                     cfg.max_epochs, cfg.patience)


def _fit_mlp(ctx: _Context):
    cfg = ctx.cfg
    params = md.init_params(ctx.mcfg, ctx.init_rng, ("enc", "stu"))
    opt = AdamState()

    def loss(w):
        return distill.loss_student(ctx.student(w), ctx.labels, ctx.train)

    return _optimize(ctx, "mlp", params, lambda: _descend(params, loss, opt, cfg),
                     lambda p: ctx.val_acc(ctx.student_eval(p)), cfg.max_epochs, cfg.patience)


def run_jkd(ctx: _Context):
    """Joint training, then KD epochs on the selected student against its frozen teacher.

    The stage-1 snapshot competes in stage-2 model selection, so zero
    stage-2 epochs reproduce the joint result.
    """
    score, epoch, params = _fit_joint(ctx)
    stage2 = ctx.cfg.stage2_epochs
    if stage2 == 0:
        return "joint", score, epoch, params
    teacher_logits = ctx.teacher_eval(params)
    student = {k: v.copy() for k, v in params.items() if not k.startswith("tea.")}
    s_score, s_epoch, s_best = _fit_student_kd(ctx, student, teacher_logits, "kd", stage2,
                                               start=(score, student))
    if s_epoch == 0:
        return "joint", score, epoch, params
    merged = {**params, **s_best}
    return "kd", s_score, s_epoch, merged


def fit(data: Graph | InductivePartition, cfg: TrainConfig) -> RunResult:
    """Train ``cfg.strategy`` and report the best-validation student's test metrics."""
    t0 = time.perf_counter()
    part = prepare(data, cfg)
    ctx = _Context(part, cfg)
    teacher_params = None
    if cfg.strategy == "kd":
        _, _, teacher_params = _fit_teacher(ctx)
        logits = ctx.teacher_eval(teacher_params)
        student = md.init_params(ctx.mcfg, ctx.init_rng, ("enc", "stu"))
        score, epoch, params = _fit_student_kd(ctx, student, logits, "kd", cfg.max_epochs)
        stage = "kd"
    elif cfg.strategy == "jkd":
        stage, score, epoch, params = run_jkd(ctx)
        teacher_params = params
    elif cfg.strategy == "joint":
        score, epoch, params = _fit_joint(ctx)
        stage, teacher_params = "joint", params
    elif cfg.strategy == "alt":
        score, epoch, params = _fit_alt(ctx)
        stage, teacher_params = "alt", params
    else:
        score, epoch, params = _fit_mlp(ctx)
        stage = "mlp"

    student = {k: v for k, v in params.items() if not k.startswith("tea.")}
    ev = evaluate(student, part, ctx.mcfg)
    teacher = None
    if teacher_params is not None:
        t_logits = md.teacher_forward(md.constants(teacher_params), part.observed_graph, ctx.mcfg).data
        labels = part.full_graph.labels
        teacher = {"val_acc": accuracy(t_logits, labels, ctx.val),
                   "tran_test": accuracy(t_logits, labels, part.transductive_test_nodes)}
    return RunResult(
        config=asdict(cfg), history=ctx.history, best_stage=stage, best_epoch=epoch,
        best_val_acc=score, tran_test=ev.tran_acc, ind_test=ev.ind_acc, full_test=ev.full_acc,
        delta_acc=ev.delta_acc, teacher=teacher, wall_seconds=time.perf_counter() - t0,
        params=student, model_config=ctx.mcfg)


def fit_teacher(data: Graph | InductivePartition, cfg: TrainConfig):
    """Train the teacher alone; returns ``(params, model_config, prepared partition)``."""
    part = prepare(data, cfg)
    ctx = _Context(part, cfg)
    _, _, params = _fit_teacher(ctx)
    return params, ctx.mcfg, part


# ---------------------------------------------------------------- grids and sweeps

GRID_AXES = {
    "alpha": "alpha", "lambda": "lam", "lam": "lam", "lr": "lr",
    "weight_decay": "weight_decay", "wd": "weight_decay", "dropout": "dropout",
    "max_epochs": "max_epochs", "epochs": "max_epochs", "hidden": "hidden",
    "stage2_epochs": "stage2_epochs", "aggregator": "aggregator", "fanout": "fanout",
}


def default_grid(strategy: str) -> dict[str, list]:
    """Hyperparameter grid searched per strategy."""
    grid: dict[str, list] = {"lr": [1e-4, 1e-5], "weight_decay": [5e-5, 5e-6]}
    if strategy in ("joint", "alt"):
        grid = {"alpha": [0.2, 0.4], "lam": [20.0, 50.0], **grid}
    elif strategy == "jkd":
        grid = {"alpha": [0.4, 0.6, 0.8], "lam": [20.0, 50.0], **grid}
    elif strategy == "kd":
        grid = {"lam": [20.0, 50.0], **grid}
    return grid


def expand_grid(grid: Mapping[str, Sequence]) -> list[dict]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must have at least one value per axis")
    keys = [GRID_AXES.get(k, k) for k in grid]
    bad = [k for k in keys if k not in TrainConfig.__dataclass_fields__]
    if bad:
        raise ValueError(f"unknown grid axes: {bad}")
    return [dict(zip(keys, combo)) for combo in itertools.product(*grid.values())]


def _run_cell(args):
    data, cfg = args
    return fit(data, cfg)


def parallel_map(fn, items: Iterable, jobs: int = 1) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@dataclass
class GridResult:
    cells: list  # (overrides, RunResult) in grid order
    best_index: int

    @property
    def best(self) -> RunResult:
        return self.cells[self.best_index][1]


def grid_search(data: Graph | InductivePartition, base: TrainConfig,
                grid: Mapping[str, Sequence] | None = None, jobs: int = 1) -> GridResult:
    """Fit every grid cell; the best cell maximizes validation accuracy (first wins ties)."""
    cells = expand_grid(grid or default_grid(base.strategy))
    cfgs = [replace(base, **c) for c in cells]
    results = parallel_map(_run_cell, [(data, c) for c in cfgs], jobs)
    best = max(range(len(results)), key=lambda i: (results[i].best_val_acc, -i))
    return GridResult(list(zip(cells, results)), best)


class SweepRow(NamedTuple):
    rate: float
    strategy: str
    ind_acc: float | None
    tran_acc: float | None
    val_acc: float


def rate_sweep(g: Graph, rates: Sequence[float], cfg: TrainConfig,
               strategies: Sequence[str] = ("joint", "kd"),
               grid: Mapping[str, Sequence] | None = None, jobs: int = 1,
               holdout_val: bool = False) -> list[SweepRow]:
    """Inductive accuracy per (rate, strategy); a fresh seeded partition per rate.

    Partitions depend only on ``cfg.seed`` and the rate, so every strategy
    sees the same inductive nodes at a given rate. With ``grid`` each cell
    is tuned on validation accuracy.
    """
    if not rates:
        raise ValueError("no rates given")
    for r in rates:
        if not 0.0 <= r <= 0.9:
            raise ValueError(f"rate {r} outside [0, 0.9]")
    jobs_list = []
    for r in rates:
        part = make_inductive(g, r, np.random.default_rng(cfg.seed), holdout_val)
        for s in strategies:
            base = replace(cfg, strategy=s)
            cells = expand_grid(grid) if grid else [{}]
            jobs_list.extend((r, s, i, (part, replace(base, **c))) for i, c in enumerate(cells))
    results = parallel_map(_run_cell, [j[3] for j in jobs_list], jobs)
    rows = []
    for r in rates:
        for s in strategies:
            cell = [res for (rr, ss, _, _), res in zip(jobs_list, results) if rr == r and ss == s]
            best = max(range(len(cell)), key=lambda i: (cell[i].best_val_acc, -i))
            res = cell[best]
            rows.append(SweepRow(r, s, res.ind_test, res.tran_test, res.best_val_acc))
    return rows


def _fmt(x) -> str:
    return "NA" if x is None else f"{x:.6f}"


def sweep_tsv(rows: Sequence[SweepRow]) -> str:
    lines = ["rate\tstrategy\tind_acc"]
    lines += [f"{r.rate:g}\t{r.strategy}\t{_fmt(r.ind_acc)}" for r in rows]
    return "\n".join(lines) + "\n"


def grid_tsv(result: GridResult) -> str:
    keys = list(result.cells[0][0])
    lines = ["\t".join(keys + ["val_acc", "tran_acc", "ind_acc"])]
    for overrides, res in result.cells:
        vals = [f"{overrides[k]:g}" if isinstance(overrides[k], float) else str(overrides[k])
                for k in keys]
        lines.append("\t".join(vals + [_fmt(res.best_val_acc), _fmt(res.tran_test), _fmt(res.ind_test)]))
    return "\n".join(lines) + "\n"
