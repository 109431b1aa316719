"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import graph as gr
from . import models as md
from .distill import STRATEGIES
from .numeric import NumericalError
from .train import (
    TrainConfig,
    default_grid,
    evaluate,
    fit,
    grid_search,
    grid_tsv,
    prepare,
    rate_sweep,
    sweep_tsv,
)

log = logging.getLogger("graddistill")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("GRAD_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"GRAD_SEED must be an integer, got {env!r}") from None


def _load(name: str) -> gr.Graph:
    """Load a dataset directory; bare names also resolve under $GRAD_DATA_DIR."""
    path = Path(name)
    root = os.environ.get("GRAD_DATA_DIR")
    if not path.exists() and root:
        path = Path(root) / name
    return gr.load_dataset(path)


def _rate(text: str) -> float:
    v = float(text)
    return v / 100.0 if v > 1.0 else v


def _hyper_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    h = p.add_argument_group("model and optimization")
    h.add_argument("--data", required=True, help="dataset directory or a name under $GRAD_DATA_DIR")
    h.add_argument("--strategy", default="joint", choices=STRATEGIES)
    h.add_argument("--alpha", type=float, default=TrainConfig.alpha)
    h.add_argument("--lambda", dest="lam", type=float, default=TrainConfig.lam)
    h.add_argument("--lr", type=float, default=TrainConfig.lr)
    h.add_argument("--weight-decay", type=float, default=TrainConfig.weight_decay)
    h.add_argument("--dropout", type=float, default=TrainConfig.dropout)
    h.add_argument("--epochs", type=int, default=TrainConfig.max_epochs, help="maximum epochs")
    h.add_argument("--patience", type=int, default=None, help="early-stopping patience (default: min(50, epochs))")
    h.add_argument("--eval-every", type=int, default=1)
    h.add_argument("--hidden", type=int, default=TrainConfig.hidden)
    h.add_argument("--encoder-layers", type=int, default=TrainConfig.encoder_layers)
    h.add_argument("--sage-layers", type=int, default=TrainConfig.sage_layers)
    h.add_argument("--teacher-head-layers", type=int, default=TrainConfig.teacher_head_layers)
    h.add_argument("--stage2-epochs", type=int, default=TrainConfig.stage2_epochs)
    h.add_argument("--aggregator", choices=gr.AGGREGATORS, default="mean")
    h.add_argument("--sampled", action="store_true", help="sample neighbors per layer while training")
    h.add_argument("--fanout", type=int, default=TrainConfig.fanout)
    h.add_argument("--temperature", type=float, default=1.0)
    h.add_argument("--raw-features", action="store_true", help="skip L1 row normalization of features")
    h.add_argument("--joint-detach-teacher", action="store_true",
                   help="ablation: KL term does not train the teacher under joint")
    h.add_argument("--seed", type=int, default=None, help="seed (fallback: $GRAD_SEED, then 0)")
    h.add_argument("--jobs", type=int, default=1, help="parallel training runs")
    return p


def _config(args) -> TrainConfig:
    patience = args.patience if args.patience is not None else min(TrainConfig.patience, args.epochs)
    try:
        return TrainConfig(
            strategy=args.strategy, alpha=args.alpha, lam=args.lam, lr=args.lr,
            weight_decay=args.weight_decay, dropout=args.dropout, max_epochs=args.epochs,
            patience=patience, seed=_seed(args.seed), aggregator=args.aggregator,
            eval_every=args.eval_every, hidden=args.hidden, encoder_layers=args.encoder_layers,
            sage_layers=args.sage_layers, teacher_head_layers=args.teacher_head_layers,
            stage2_epochs=args.stage2_epochs, sampled=args.sampled, fanout=args.fanout,
            temperature=args.temperature, normalize_features=not args.raw_features,
            joint_detach_teacher=args.joint_detach_teacher)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _partition(args, g: gr.Graph, seed: int):
    if args.rate is not None and not args.inductive:
        raise UsageError("--rate requires --inductive")
    if not args.inductive:
        return gr.transductive(g)
    rate = 0.5 if args.rate is None else args.rate
    return gr.make_inductive(g, rate, np.random.default_rng(seed), args.holdout_val)


def _add_inductive(p):
    p.add_argument("--inductive", action="store_true", help="withhold test nodes from the training graph")
    p.add_argument("--rate", type=_rate, default=None, help="inductive node rate (fraction or percent; default 0.5)")
    p.add_argument("--holdout-val", action="store_true", help="also withhold the same fraction of validation nodes")


def _fmt(x):
    return "NA" if x is None else f"{x:.4f}"


def cmd_train(args) -> int:
    cfg = _config(args)
    g = _load(args.data)
    part = _partition(args, g, cfg.seed)
    if args.tune:
        res = grid_search(part, cfg, default_grid(cfg.strategy), args.jobs)
        if args.grid_out:
            Path(args.grid_out).write_text(grid_tsv(res), encoding="utf-8")
        result = res.best
    else:
        result = fit(part, cfg)
    Path(args.out).write_text(result.to_json(args.timing), encoding="utf-8")
    if args.save_params:
        md.save_checkpoint(result.params, args.save_params, result.model_config)
    log.info("finished in %.1fs", result.wall_seconds)
    print(f"strategy={cfg.strategy} tran={_fmt(result.tran_test)} ind={_fmt(result.ind_test)} "
          f"delta={_fmt(result.delta_acc)}")
    return 0


def _parse_grid(items) -> dict:
    grid = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"grid axis {item!r} is not of the form name=v1,v2")
        key, _, vals = item.partition("=")
        values = [v for v in vals.split(",") if v.strip()]
        if not values:
            raise UsageError(f"grid axis {key!r} has no values")
        parsed = []
        for v in values:
            try:
                parsed.append(int(v) if key in ("epochs", "max_epochs", "hidden", "fanout", "stage2_epochs")
                              else v if key == "aggregator" else float(v))
            except ValueError:
                raise UsageError(f"bad value {v!r} for grid axis {key!r}") from None
        grid[key] = parsed
    if not grid:
        raise UsageError("empty grid")
    return grid


def cmd_sweep(args) -> int:
    if args.rates is None and args.grid is None:
        raise UsageError("sweep needs --rates or --grid")
    cfg = _config(args)
    grid = _parse_grid(args.grid) if args.grid is not None else None
    g = _load(args.data)
    if args.rates is not None:
        rates = [_rate(r) for r in args.rates.split(",") if r.strip()]
        if not rates:
            raise UsageError("empty rate list")
        strategies = [s.strip() for s in args.strategies.split(",")]
        bad = [s for s in strategies if s not in STRATEGIES]
        if bad:
            raise UsageError(f"unknown strategies: {bad}")
        try:
            rows = rate_sweep(g, rates, cfg, strategies, grid, args.jobs)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        table = sweep_tsv(rows)
    else:
        part = _partition(args, g, cfg.seed)
        try:
            table = grid_tsv(grid_search(part, cfg, grid, args.jobs))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)
    return 0


def cmd_perturb(args) -> int:
    g = _load(args.data)
    try:
        pg = gr.perturb_features(g, np.random.default_rng(_seed(args.seed)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    gr.save_dataset(pg, args.out, perturbed=True)
    print(f"wrote {args.out}")
    return 0


def cmd_convert(args) -> int:
    g = gr.convert_npz(args.npz, seed=_seed(args.seed), train_per_class=args.train_per_class,
                       val_per_class=args.val_per_class, largest_component=not args.keep_all)
    gr.save_dataset(g, args.out)
    print(f"wrote {args.out}: {g.n_nodes} nodes, {len(g.edges)} edges, {g.n_classes} classes")
    return 0


def cmd_synth(args) -> int:
    g = gr.planted_graph(n_nodes=args.nodes, n_classes=args.classes, n_dims=args.dims,
                         avg_degree=args.degree, homophily=args.homophily,
                         words_per_node=args.words, signal=args.signal,
                         train_per_class=args.train_per_class, val_per_class=args.val_per_class,
                         seed=_seed(args.seed))
    gr.save_dataset(g, args.out)
    print(f"wrote {args.out}: {g.n_nodes} nodes, {len(g.edges)} edges, {g.n_classes} classes")
    return 0


def cmd_evaluate(args) -> int:
    params, mcfg = md.load_checkpoint(args.params)
    if mcfg is None:
        raise UsageError("checkpoint lacks a model config")
    g = _load(args.data)
    part = _partition(args, g, _seed(args.seed))
    part = prepare(part, TrainConfig(normalize_features=not args.raw_features))
    ev = evaluate(params, part, mcfg)
    print(json.dumps(ev._asdict(), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graddistill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    hyper = _hyper_flags()

    p = sub.add_parser("train", parents=[hyper], help="train one strategy and write a result JSON")
    _add_inductive(p)
    p.add_argument("--out", default="result.json")
    p.add_argument("--tune", action="store_true", help="search the default grid, keep the best validation cell")
    p.add_argument("--grid-out", help="with --tune, also write the grid table (TSV)")
    p.add_argument("--save-params", help="checkpoint path stem for the selected student")
    p.add_argument("--timing", action="store_true", help="include wall-clock seconds in the JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[hyper], help="inductive-rate sweep or hyperparameter grid table")
    _add_inductive(p)
    p.add_argument("--rates", help="comma-separated inductive rates, e.g. 10,25,50,75,90")
    p.add_argument("--strategies", default="joint,kd", help="strategies compared in a rate sweep")
    p.add_argument("--grid", nargs="*", help="axes like alpha=0.2,0.4 lambda=20,50")
    p.add_argument("--out", help="TSV path (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("perturb", help="write a copy whose trailing feature half comes from random nodes")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("convert", help="convert a CSR-packed .npz release into a dataset directory")
    p.add_argument("--npz", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="split seed")
    p.add_argument("--train-per-class", type=int, default=20)
    p.add_argument("--val-per-class", type=int, default=30)
    p.add_argument("--keep-all", action="store_true", help="keep every component, not just the largest")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", type=int, default=600)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dims", type=int, default=200)
    p.add_argument("--degree", type=float, default=6.0)
    p.add_argument("--homophily", type=float, default=0.9)
    p.add_argument("--words", type=int, default=8)
    p.add_argument("--signal", type=float, default=0.5)
    p.add_argument("--train-per-class", type=int, default=10)
    p.add_argument("--val-per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="score a saved student checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True, help="checkpoint path stem")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--raw-features", action="store_true")
    _add_inductive(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
