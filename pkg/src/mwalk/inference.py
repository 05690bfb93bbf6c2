"""Test-time prediction and metrics.

Prediction merges the leaf statistics of a completed search into one
score per distinct terminal node (visit-weighted STOP values), or runs
beam search over the policy as a baseline decoder. Metrics cover hit
rate at K, mean reciprocal rank, mean average precision, and puzzle
success rate; reasoning paths are rendered by following the most-visited
edges of the search tree.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import puzzle as pz
from .graph import STOP, Query
from .mcts import SearchConfig, SearchTree, SimulationRecord, run_search
from .model import WalkerModel, WalkEncoder
from .nn import ParamStore
from .tensor import no_grad

__all__ = [
    "RankedPrediction",
    "score_nodes",
    "beam_decode",
    "hits_at_k",
    "mrr",
    "map_score",
    "EvalConfig",
    "EvalReport",
    "evaluate",
    "render_best_path",
    "build_known_true",
]

log = logging.getLogger("mwalk.inference")

MISS = math.inf


@dataclass
class RankedPrediction:
    """Candidate nodes in descending score order with search provenance."""
    items: list[tuple[int, float]]
    n_simulations: int
    leaf_counts: dict[int, int] = field(default_factory=dict)

    def rank_of(self, node: int) -> float:
        """1-based rank of a node, or infinity when absent."""
        for i, (cand, _) in enumerate(self.items):
            if cand == node:
                return i + 1
        return MISS

    def top(self) -> Optional[int]:
        return self.items[0][0] if self.items else None

    def filtered(self, exclude: set[int]) -> "RankedPrediction":
        """Drop competitor nodes (known-true answers other than the one
        being ranked) before computing ranks."""
        return RankedPrediction(
            items=[(n, s) for n, s in self.items if n not in exclude],
            n_simulations=self.n_simulations,
            leaf_counts={n: c for n, c in self.leaf_counts.items()
                         if n not in exclude})


def score_nodes(tree: SearchTree, records: Sequence[SimulationRecord],
                ) -> RankedPrediction:
    """Merge leaf statistics into one score per distinct terminal node.

    Each leaf state contributes its STOP visit count (normalized by the
    total simulation count) times its STOP Q-value; leaves reaching the
    same node sum. Ties in the final ordering break by node id.
    """
    n_total = len(records)
    leaf_nodes: dict[tuple, int] = {}
    for rec in records:
        leaf_nodes[rec.keys[-1]] = rec.final_node
    scores: dict[int, float] = {}
    leaves: dict[int, int] = {}
    for key, node_id in leaf_nodes.items():
        tn = tree.nodes[key]
        contribution = float(tn.n[STOP]) / n_total * float(tn.q_values[STOP])
        scores[node_id] = scores.get(node_id, 0.0) + contribution
        leaves[node_id] = leaves.get(node_id, 0) + 1
    items = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return RankedPrediction(items=items, n_simulations=n_total,
                            leaf_counts=leaves)


def beam_decode(encoder: WalkEncoder, query, beam_size: int,
                ) -> RankedPrediction:
    """Beam search over the policy.

    Keeps the ``beam_size`` highest cumulative-log-probability partial
    walks; whenever a walk takes STOP its node is recorded with that
    path's log-probability, and each node is finally ranked by its best
    completed path. With beam 1 this reduces to the greedy argmax walk.
    """
    if beam_size < 1:
        raise ValueError("beam size must be >= 1")
    model, params, env = encoder.model, encoder.params, encoder.env
    completed: dict[int, float] = {}
    paths_seen = 0
    with no_grad():
        state, enc = encoder.root(query)
        alive = [(0.0, state, enc)]
        while alive:
            expansions = []
            for logp, state, enc in alive:
                scores = model.score_actions(params, enc)
                u = scores.u.data.astype(np.float64) / model.config.tau
                logpi = u - u.max()
                logpi -= np.log(np.exp(logpi).sum())
                stop_score = logp + float(logpi[STOP])
                paths_seen += 1
                if completed.get(state.node, -math.inf) < stop_score:
                    completed[state.node] = stop_score
                for j in range(1, len(enc.cands)):
                    expansions.append((logp + float(logpi[j]), state, enc, j))
            if not expansions:
                break
            order = sorted(range(len(expansions)),
                           key=lambda i: -expansions[i][0])[:beam_size]
            alive = []
            for i in sorted(order):
                logp, state, enc, action = expansions[i]
                nxt_state, nxt_enc = encoder.child(state, enc, action)
                alive.append((logp, nxt_state, nxt_enc))
    items = sorted(completed.items(), key=lambda kv: (-kv[1], kv[0]))
    return RankedPrediction(items=items, n_simulations=paths_seen)


# -- ranking metrics ---------------------------------------------------------

def hits_at_k(ranks: Sequence[float], k: int) -> float:
    """Fraction of queries whose true answer ranked in the top k; misses
    (rank infinity) never count."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranks:
        return 0.0
    return sum(1 for r in ranks if r <= k) / len(ranks)


def mrr(ranks: Sequence[float]) -> float:
    """Mean reciprocal rank; misses contribute 0."""
    if not ranks:
        return 0.0
    return sum(0.0 if math.isinf(r) else 1.0 / r for r in ranks) / len(ranks)


def map_score(queries: Sequence[tuple[Sequence[int], set[int]]]) -> float:
    """Mean average precision over (ranked candidate ids, positive set)
    pairs. Positives missing from a ranking contribute zero precision;
    queries without positives are skipped with a warning.
    """
    aps = []
    for ranked, positives in queries:
        if not positives:
            log.warning("map_score: query with no positives skipped")
            continue
        hits = 0
        precision_sum = 0.0
        for idx, cand in enumerate(ranked, start=1):
            if cand in positives:
                hits += 1
                precision_sum += hits / idx
        aps.append(precision_sum / len(positives))
    return float(np.mean(aps)) if aps else 0.0


def build_known_true(query_lists: Sequence[Sequence[Query]],
                     ) -> dict[tuple[int, int], set[int]]:
    """Collect every known answer per (source, relation) across splits,
    for the filtered ranking convention."""
    known: dict[tuple[int, int], set[int]] = {}
    for queries in query_lists:
        for q in queries:
            if q.target is not None:
                known.setdefault((q.source, q.relation), set()).add(q.target)
    return known


# -- evaluation harness ------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    mode: str = "mcts"                   # mcts | beam
    num_simulations: int = 32
    beam_size: int = 128
    c: float = 0.5
    beta: float = 0.2
    gamma: float = 0.99
    filtered: bool = True
    budgets: tuple[int, ...] = ()        # extra simulation budgets to report

    def search_config(self, num_simulations: int | None = None) -> SearchConfig:
        return SearchConfig(num_simulations=num_simulations or self.num_simulations,
                            c=self.c, beta=self.beta, gamma=self.gamma)


@dataclass
class EvalReport:
    metrics: dict
    per_query: list[dict]
    notes: list[str] = field(default_factory=list)

    def render_text(self) -> str:
        lines = ["== evaluation =="]
        for name in sorted(self.metrics):
            value = self.metrics[name]
            if isinstance(value, float):
                lines.append("%s: %.4f" % (name, value))
            else:
                lines.append("%s: %s" % (name, value))
        for note in self.notes:
            lines.append("note: %s" % note)
        return "\n".join(lines)


def render_best_path(tree: SearchTree, env, query) -> str:
    """Walk the search tree along the most-visited edges and render the
    trajectory as 'node -edge-> node' hops."""
    state = env.initial_state(query)
    key = tree.root_key(state.node)
    parts = [env.node_name(state.node)]
    while True:
        node = tree.get(key)
        if node is None or node.n.sum() <= 0:
            break
        action = int(np.argmax(node.n))
        if action == STOP:
            break
        dest = node.enc.cands.destination(action)
        parts.append("-%s-> %s" % (env.edge_name(node.enc.cands.edge_type(action)),
                                   env.node_name(dest)))
        key = key + (action, dest)
    return " ".join(parts)


def _search_effort_until_hit(records: Sequence[SimulationRecord],
                             is_target: Callable[[int], bool]) -> int:
    """Node visits accumulated across simulations (in order) until a
    target node is first reached; all visits if it never is."""
    visited = 0
    for rec in records:
        for node in rec.nodes:
            visited += 1
            if is_target(node):
                return visited
    return visited


def _mcts_predictions(encoder: WalkEncoder, query, cfg: EvalConfig,
                      ) -> tuple[dict[int, RankedPrediction], SearchTree,
                                 list[SimulationRecord]]:
    """Rankings at every requested budget from one deterministic search.

    Because selection and evaluation are deterministic, the first e
    simulations of a larger run are identical to a fresh run with budget
    e, so intermediate snapshots are exact.
    """
    budgets = sorted(set(cfg.budgets) | {cfg.num_simulations})
    snapshots: dict[int, RankedPrediction] = {}

    def snap(i, tree, records):
        if i in budgets:
            snapshots[i] = score_nodes(tree, records)

    tree, records = run_search(encoder, query,
                               cfg.search_config(max(budgets)), on_simulation=snap)
    return snapshots, tree, records


def _map_queries(fn: Callable, queries: Sequence, workers: int) -> list:
    """Apply a per-query evaluation function, optionally across threads.

    Results are collected in query order either way, so the report is
    identical whatever the worker count.
    """
    if workers <= 1 or len(queries) <= 1:
        return [fn(q) for q in queries]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, queries))


def evaluate(model: WalkerModel, params: ParamStore, env_of: Callable,
             queries: Sequence, cfg: EvalConfig,
             known_true: dict[tuple[int, int], set[int]] | None = None,
             workers: int = 1) -> EvalReport:
    """Run prediction over a query set and compute the environment's
    metrics: success rate for the puzzle, hit rates / MRR / MAP for
    knowledge-graph completion. Reports the most-visited reasoning path
    per query when searching with the tree."""
    if not queries:
        return EvalReport(metrics={}, per_query=[],
                          notes=["empty query set"])
    if isinstance(queries[0], pz.PuzzleSpec):
        return _evaluate_puzzle(model, params, env_of, queries, cfg, workers)
    return _evaluate_kbc(model, params, env_of, queries, cfg, known_true, workers)


def _evaluate_puzzle(model, params, env_of, specs, cfg: EvalConfig,
                     workers: int = 1) -> EvalReport:
    def eval_one(spec):
        env = env_of(spec)
        encoder = WalkEncoder(model, params, env)
        row = {"query": "A=%d B=%d C=%d target=%d" % spec}
        if cfg.mode == "beam":
            pred = beam_decode(encoder, spec, cfg.beam_size)
            success_at = {cfg.beam_size: _puzzle_success(spec, pred)}
            effort = 0
            row.update(success=bool(success_at[cfg.beam_size]),
                       prediction=_top_name(env, pred))
        else:
            snapshots, tree, records = _mcts_predictions(encoder, spec, cfg)
            success_at = {budget: _puzzle_success(spec, pred)
                          for budget, pred in snapshots.items()}
            pred = snapshots[max(snapshots)]
            effort = _search_effort_until_hit(
                records, lambda n: pz.is_success(spec, pz.status_of(n)))
            row.update(success=bool(success_at[max(success_at)]),
                       prediction=_top_name(env, pred),
                       path=render_best_path(tree, env, spec))
        return row, success_at, effort

    results = _map_queries(eval_one, specs, workers)
    correct_at: dict[int, int] = {}
    rows = []
    effort_total = 0
    for row, success_at, effort in results:
        rows.append(row)
        effort_total += effort
        for budget, success in success_at.items():
            correct_at[budget] = correct_at.get(budget, 0) + success
    n = len(specs)
    metrics: dict = {}
    for budget in sorted(correct_at):
        if len(correct_at) > 1:
            metrics["accuracy@%d" % budget] = correct_at[budget] / n
    metrics["accuracy"] = correct_at[max(correct_at)] / n
    if cfg.mode != "beam":
        metrics["mean_search_effort"] = effort_total / n
    return EvalReport(metrics=metrics, per_query=rows)


def _puzzle_success(spec: pz.PuzzleSpec, pred: RankedPrediction) -> int:
    top = pred.top()
    if top is None:
        return 0
    return int(pz.is_success(spec, pz.status_of(top)))


def _top_name(env, pred: RankedPrediction) -> str:
    top = pred.top()
    return env.node_name(top) if top is not None else "<none>"


def _evaluate_kbc(model, params, env_of, queries, cfg: EvalConfig,
                  known_true, workers: int = 1) -> EvalReport:
    notes = []
    if known_true is None:
        known_true = {}
        if cfg.filtered:
            notes.append("filtered ranking requested without known-true "
                         "sets; falling back to raw ranks")

    def eval_one(query):
        env = env_of(query)
        encoder = WalkEncoder(model, params, env)
        row = {"query": "%s -%s-> ?" % (env.node_name(query.source),
                                        env.edge_name(query.relation)),
               "target": env.node_name(query.target)}
        if cfg.mode == "beam":
            snapshots = {cfg.beam_size: beam_decode(encoder, query, cfg.beam_size)}
            primary = snapshots[cfg.beam_size]
        else:
            snapshots, tree, _records = _mcts_predictions(encoder, query, cfg)
            primary = snapshots[max(snapshots)]
            row["path"] = render_best_path(tree, env, query)
        competitors: set[int] = set()
        if cfg.filtered and known_true:
            competitors = known_true.get((query.source, query.relation), set()) \
                - {query.target}
        rank_at = {}
        for budget, pred in snapshots.items():
            if competitors:
                pred = pred.filtered(competitors)
            rank_at[budget] = pred.rank_of(query.target)
        pred = primary.filtered(competitors) if competitors else primary
        rank = pred.rank_of(query.target)
        map_entry = ([n for n, _ in pred.items], {query.target})
        row.update(rank=(None if math.isinf(rank) else int(rank)),
                   n_candidates=len(pred.items))
        return row, rank_at, map_entry

    results = _map_queries(eval_one, queries, workers)
    ranks_at: dict[int, list[float]] = {}
    map_entries: list[tuple[list[int], set[int]]] = []
    rows = []
    for row, rank_at, map_entry in results:
        rows.append(row)
        map_entries.append(map_entry)
        for budget, rank in rank_at.items():
            ranks_at.setdefault(budget, []).append(rank)
    metrics: dict = {}
    budgets = sorted(ranks_at)
    for budget in budgets:
        suffix = "" if len(budgets) == 1 else "@%dsims" % budget
        ranks = ranks_at[budget]
        metrics["hits1" + suffix] = hits_at_k(ranks, 1)
        metrics["hits3" + suffix] = hits_at_k(ranks, 3)
        metrics["hits10" + suffix] = hits_at_k(ranks, 10)
        metrics["mrr" + suffix] = mrr(ranks)
    metrics["map"] = map_score(map_entries)
    notes.append("map computed over search candidates with the query "
                 "target as the positive")
    metrics["ranking"] = "filtered" if (cfg.filtered and known_true) else "raw"
    return EvalReport(metrics=metrics, per_query=rows, notes=notes)
