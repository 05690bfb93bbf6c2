"""Command-line surface: dataset generation, training, evaluation, and
single-query prediction.

Subcommands: ``puzzle-gen``, ``train``, ``eval``, ``predict``. A config
file provides the run settings; flags override file values. Every run
writes an immutable copy of its effective config next to its outputs.
Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import stat
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, default_config, load_config
from .errors import ConfigError, DataError
from .graph import KgEnvironment, Query, load_triples
from .inference import EvalConfig, build_known_true, evaluate, score_nodes
from .mcts import run_search
from .model import (KbcFeaturizer, ModelConfig, PuzzleFeaturizer, WalkerModel,
                    WalkEncoder)
from .nn import ParamStore
from .puzzle import (PuzzleEnvironment, PuzzleSpec, generate_dataset,
                     load_dataset, write_dataset)
from .seeding import derive_rng
from .training import TrainConfig, train_mwalk, train_pg, train_qwalk
from .inference import render_best_path

log = logging.getLogger("mwalk.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _setup_logging() -> None:
    level = os.environ.get("MWALK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(state_dim=cfg.state_dim, gru_hidden=cfg.gru_hidden,
                       stop_hidden=cfg.stop_hidden,
                       stop_activation=cfg.stop_activation, tau=cfg.tau)


class RunContext:
    """Everything a command needs: model, environment accessor, queries."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        if cfg.env == "puzzle":
            if not cfg.data_dir:
                raise ConfigError("puzzle runs need data.data_dir "
                                  "(see the puzzle-gen command)")
            dataset = load_dataset(cfg.data_dir)
            env = PuzzleEnvironment(horizon=cfg.horizon)
            self.model = WalkerModel(_model_config(cfg),
                                     PuzzleFeaturizer(query_dim=cfg.query_dim))
            self.env_of = lambda query: env
            self.train_queries = dataset.train
            self.test_queries = dataset.test
            self.known_true = None
            self.graph = None
        elif cfg.env == "kbc":
            if not cfg.train_file:
                raise ConfigError("kbc runs need data.train_file")
            graph, train_q, valid_q, test_q = load_triples(
                cfg.train_file, cfg.valid_file or None, cfg.test_file or None,
                cfg.inverse_marker)
            env = KgEnvironment(graph, horizon=cfg.horizon,
                                mask_query_edge=cfg.mask_query_edge)
            self.model = WalkerModel(
                _model_config(cfg),
                KbcFeaturizer(graph, entity_dim=cfg.entity_dim,
                              relation_dim=cfg.relation_dim))
            self.env_of = lambda query: env
            self.train_queries = train_q
            self.test_queries = test_q or valid_q
            self.known_true = build_known_true([train_q, valid_q, test_q])
            self.graph = graph
        else:
            raise ConfigError("unknown environment %r" % cfg.env)

    def init_params(self) -> ParamStore:
        return self.model.init_params(derive_rng(self.cfg.seed, "init"))

    def load_params(self, path: str) -> ParamStore:
        try:
            params, _meta = load_checkpoint(path)
        except FileNotFoundError:
            raise DataError("checkpoint not found: %s" % path) from None
        return params

    def eval_config(self) -> EvalConfig:
        cfg = self.cfg
        return EvalConfig(mode=cfg.eval_mode,
                          num_simulations=cfg.eval_simulations,
                          beam_size=cfg.beam_size, c=cfg.c, beta=cfg.beta,
                          gamma=cfg.gamma, filtered=cfg.filtered,
                          budgets=cfg.budget_list())


def _write_effective_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.ini"
    if path.exists():
        path.chmod(path.stat().st_mode | stat.S_IWUSR)
    cfg.write(path)
    path.chmod(stat.S_IRUSR | stat.S_IRGRP | stat.S_IROTH)


def _write_metrics(history, out_dir: Path) -> None:
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for m in history:
            fh.write(json.dumps(m.as_record(), sort_keys=True) + "\n")
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "positive_reward_rate", "mean_td_error"])
        for m in history:
            writer.writerow([m.epoch, m.positive_reward_rate, m.mean_td_error])


def cmd_puzzle_gen(args) -> int:
    dataset = generate_dataset(args.seed)
    write_dataset(args.out, dataset)
    print("wrote %d puzzles (%d train / %d test) to %s"
          % (len(dataset.specs), len(dataset.train_indices),
             len(dataset.test_indices), args.out))
    return EXIT_OK


def _load_run_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = default_config(args.env or "puzzle")
    if args.env:
        cfg.env = args.env
    overrides = list(args.set or [])
    apply_overrides(cfg, overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    ctx = RunContext(cfg)
    out_dir = Path(cfg.out_dir)
    _write_effective_config(cfg, out_dir)
    params = ctx.load_params(args.checkpoint) if args.checkpoint \
        else ctx.init_params()
    train_cfg = TrainConfig(trainer=cfg.trainer, epochs=cfg.epochs, lr=cfg.lr,
                            batch_size=cfg.batch_size, gen_batch=cfg.gen_batch,
                            gamma=cfg.gamma, rollouts=cfg.num_simulations,
                            c=cfg.c, beta=cfg.beta, epsilon=cfg.epsilon,
                            baseline_decay=cfg.baseline_decay, seed=cfg.seed)
    trainers = {"mwalk": train_mwalk, "pg": train_pg, "qwalk": train_qwalk}
    if cfg.trainer not in trainers:
        raise ConfigError("unknown trainer %r" % cfg.trainer)

    def eval_fn(p, epoch):
        report = evaluate(ctx.model, p, ctx.env_of, ctx.test_queries,
                          ctx.eval_config(), ctx.known_true, cfg.workers)
        return {k: v for k, v in report.metrics.items()
                if isinstance(v, (int, float))}

    def epoch_hook(epoch, p, metrics):
        if cfg.checkpoint_interval and epoch % cfg.checkpoint_interval == 0:
            save_checkpoint(out_dir / ("checkpoint_epoch%04d.npz" % epoch),
                            p, cfg.config_hash())

    history = trainers[cfg.trainer](
        ctx.model, params, ctx.env_of, ctx.train_queries, train_cfg,
        eval_fn=eval_fn if cfg.eval_interval else None,
        eval_interval=cfg.eval_interval, epoch_hook=epoch_hook)
    save_checkpoint(out_dir / "checkpoint.npz", params, cfg.config_hash())
    _write_metrics(history, out_dir)
    print("trained %s for %d epochs; checkpoint at %s"
          % (cfg.trainer, cfg.epochs, out_dir / "checkpoint.npz"))
    if history:
        print("final positive reward rate: %.3f"
              % history[-1].positive_reward_rate)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    ctx = RunContext(cfg)
    out_dir = Path(cfg.out_dir)
    _write_effective_config(cfg, out_dir)
    params = ctx.load_params(args.checkpoint)
    report = evaluate(ctx.model, params, ctx.env_of, ctx.test_queries,
                      ctx.eval_config(), ctx.known_true, cfg.workers)
    print(report.render_text())
    (out_dir / "report.txt").write_text(report.render_text() + "\n",
                                        encoding="utf-8")
    metric_rows = [(k, v) for k, v in sorted(report.metrics.items())
                   if isinstance(v, (int, float))]
    with open(out_dir / "eval_metrics.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(metric_rows)
    if report.per_query:
        keys = sorted({k for row in report.per_query for k in row})
        with open(out_dir / "per_query.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(report.per_query)
    return EXIT_OK


def _parse_query(ctx: RunContext, text: str):
    parts = text.split()
    if ctx.cfg.env == "puzzle":
        if len(parts) != 4:
            raise DataError("puzzle query must be 'A B C q', got %r" % text)
        return PuzzleSpec(*(int(p) for p in parts))
    if len(parts) < 2:
        raise DataError("kbc query must be 'source relation [target]', got %r"
                        % text)
    graph = ctx.graph
    if parts[0] not in graph.entity_id:
        raise DataError("unknown entity %r" % parts[0])
    if parts[1] not in graph.relation_id:
        raise DataError("unknown relation %r" % parts[1])
    target = None
    if len(parts) > 2:
        if parts[2] not in graph.entity_id:
            raise DataError("unknown entity %r" % parts[2])
        target = graph.entity_id[parts[2]]
    return Query(source=graph.entity_id[parts[0]],
                 relation=graph.relation_id[parts[1]], target=target)


def cmd_predict(args) -> int:
    cfg = _load_run_config(args)
    ctx = RunContext(cfg)
    params = ctx.load_params(args.checkpoint)
    query = _parse_query(ctx, args.query)
    env = ctx.env_of(query)
    encoder = WalkEncoder(ctx.model, params, env)
    eval_cfg = ctx.eval_config()
    tree, records = run_search(encoder, query, eval_cfg.search_config())
    pred = score_nodes(tree, records)
    print("query: %s" % args.query)
    for node, score in pred.items[:10]:
        print("  %-30s score=%.4f" % (env.node_name(node), score))
    print("reasoning path: %s" % render_best_path(tree, env, query))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwalk",
        description="Graph-walking agent with tree search and Q-learning")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("puzzle-gen", help="generate the puzzle dataset")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_puzzle_gen)

    def common(p, needs_checkpoint: bool):
        p.add_argument("--config", help="run config file (ini)")
        p.add_argument("--env", choices=["puzzle", "kbc"],
                       help="environment kind when no config file is given")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (section.key=value)")
        p.add_argument("--checkpoint", required=needs_checkpoint,
                       help="parameter checkpoint (.npz)")

    train = sub.add_parser("train", help="train a walker")
    common(train, needs_checkpoint=False)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(ev, needs_checkpoint=True)
    ev.set_defaults(func=cmd_eval)

    pred = sub.add_parser("predict", help="answer a single query")
    common(pred, needs_checkpoint=True)
    pred.add_argument("--query", required=True,
                      help="'A B C q' (puzzle) or 'source relation' (kbc)")
    pred.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("run failed")
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
