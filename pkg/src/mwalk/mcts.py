"""PUCT Monte Carlo Tree Search over a deterministic walk environment.

The tree is an associative table keyed by the path taken from the root
(node and action indices interleaved), so distinct paths to the same
node keep separate statistics. Each simulation walks by the PUCT rule
until it selects STOP or hits the horizon, evaluates the terminal state
with the model's STOP value, and backs the value up the path with a
discount that decays toward the root.

A node is created (and its priors, Q-values, and candidate encodings
cached) the first time a simulation reaches it. At a node with no
visits every PUCT score vanishes (the exploration factor carries
sqrt(total visits) = 0), so ties are broken by the policy prior — the
limit ordering of the selection rule as the visit total approaches
zero — and simulations therefore keep walking through fresh nodes the
way the policy suggests instead of stopping at every frontier node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .graph import STOP, WalkState
from .model import EncodedState, WalkEncoder
from .tensor import no_grad

__all__ = [
    "SearchConfig",
    "TreeNode",
    "SearchTree",
    "SimulationRecord",
    "puct_scores",
    "puct_select",
    "simulate",
    "backup",
    "run_search",
]


@dataclass(frozen=True)
class SearchConfig:
    num_simulations: int = 32
    c: float = 0.5
    beta: float = 0.2
    gamma: float = 0.99
    # Training-time grounding: back up the true terminal reward instead
    # of the model's STOP value. Only trajectory generation for training
    # uses this (the answer is known there); prediction always backs up
    # the model value, since the answer is what is being inferred.
    # Without grounding, an untrained value function gives the search no
    # signal to concentrate on discovered successes, and the positive
    # trajectories stay too rare to escape the sparse-reward regime.
    ground_terminal_value: bool = False
    # Seed the mean-value term of an unvisited edge with the network's
    # own Q estimate instead of zero, so simulations follow the learned
    # value field into unexplored regions. Visited edges always use their
    # accumulated W/N.
    value_init: bool = True


@dataclass
class TreeNode:
    """Cached per-state statistics and encodings.

    ``n`` is the discounted visit count and ``w`` the accumulated value,
    both real-valued and updated only by :func:`backup`.
    """
    state: WalkState
    enc: EncodedState
    prior: np.ndarray      # policy over STOP + edges, float64
    q_values: np.ndarray   # sigmoid scores over STOP + edges, float64
    n: np.ndarray = field(init=False)
    w: np.ndarray = field(init=False)

    def __post_init__(self):
        k = len(self.prior)
        self.n = np.zeros(k, dtype=np.float64)
        self.w = np.zeros(k, dtype=np.float64)


class SearchTree:
    """Path-keyed lookup table of :class:`TreeNode` entries."""

    def __init__(self, query):
        self.query = query
        self.nodes: dict[tuple, TreeNode] = {}
        self._root = None  # cached (state, encoding); parameters are
                           # immutable for the lifetime of one tree

    def __len__(self) -> int:
        return len(self.nodes)

    def get(self, key: tuple) -> Optional[TreeNode]:
        return self.nodes.get(key)

    def root_key(self, source_node: int) -> tuple:
        return (self.query, source_node)


@dataclass
class SimulationRecord:
    """One root-to-terminal walk: the tree keys and actions taken, the
    node ids visited, and the terminal value estimate."""
    query: object
    keys: list[tuple]
    actions: list[int]
    nodes: list[int]
    value: float
    final_state: WalkState

    @property
    def length(self) -> int:
        return len(self.actions) - 1

    @property
    def final_node(self) -> int:
        return self.nodes[-1]


def puct_scores(n: np.ndarray, w: np.ndarray, prior: np.ndarray,
                c: float, beta: float,
                q_init: np.ndarray | None = None) -> np.ndarray:
    """Selection scores: c * prior^beta * sqrt(total n) / (1 + n) + w/n.

    The mean-value term where n == 0 is 0 by default, or the entries of
    ``q_init`` when given (the network's value estimates for edges the
    search has not tried yet). Computed in float64 so hand-evaluated
    examples match exactly.
    """
    n = np.asarray(n, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    explore = c * np.power(prior, beta) * np.sqrt(n.sum()) / (1.0 + n)
    if q_init is None:
        fill = np.zeros_like(w)
    else:
        fill = np.asarray(q_init, dtype=np.float64).copy()
    exploit = np.divide(w, n, out=fill, where=n > 0)
    return explore + exploit


def puct_select(node: TreeNode, c: float, beta: float,
                value_init: bool = False) -> int:
    """Index of the maximal PUCT score.

    Exact score ties (notably the all-zero vector at an unvisited node)
    are broken by the larger policy prior, then by the lower index.
    """
    scores = puct_scores(node.n, node.w, node.prior, c, beta,
                         node.q_values if value_init else None)
    best = np.flatnonzero(scores == scores.max())
    if len(best) == 1:
        return int(best[0])
    return int(best[np.argmax(node.prior[best])])


def _expand(tree: SearchTree, key: tuple, state: WalkState, enc: EncodedState,
            encoder: WalkEncoder) -> TreeNode:
    scores = encoder.model.score_actions(encoder.params, enc)
    node = TreeNode(state=state, enc=enc,
                    prior=scores.policy.data.astype(np.float64),
                    q_values=scores.q_values.data.astype(np.float64))
    tree.nodes[key] = node
    return node


def simulate(tree: SearchTree, encoder: WalkEncoder, config: SearchConfig,
             ) -> SimulationRecord:
    """Run one simulation from the root and back up its terminal value."""
    with no_grad():
        if tree._root is None:
            tree._root = encoder.root(tree.query)
        state, enc = tree._root
        key = tree.root_key(state.node)
        path: list[tuple[tuple, int]] = []
        nodes_visited = [state.node]
        while True:
            node = tree.get(key)
            if node is None:
                node = _expand(tree, key, state, enc, encoder)
            action = puct_select(node, config.c, config.beta,
                                 config.value_init)
            path.append((key, action))
            if action == STOP:
                final_state = encoder.env.step(node.state, STOP, node.enc.cands)
                if config.ground_terminal_value:
                    value = float(encoder.env.reward(final_state))
                else:
                    value = float(node.q_values[0])
                record = SimulationRecord(
                    query=tree.query,
                    keys=[k for k, _ in path],
                    actions=[a for _, a in path],
                    nodes=nodes_visited,
                    value=value,
                    final_state=final_state)
                backup(tree, record, config.gamma)
                return record
            next_key = key + (action, node.enc.cands.destination(action))
            nxt = tree.get(next_key)
            if nxt is None:
                state, enc = encoder.child(node.state, node.enc, action)
            else:
                state, enc = nxt.state, nxt.enc
            nodes_visited.append(state.node)
            key = next_key


def backup(tree: SearchTree, record: SimulationRecord, gamma: float) -> None:
    """Propagate the terminal value along the simulated path.

    The edge taken at step t receives an increment discounted by
    gamma^(T - t), where T is the path length; the STOP edge at the leaf
    therefore gets a full unit increment.
    """
    length = record.length
    for t, (key, action) in enumerate(zip(record.keys, record.actions)):
        weight = gamma ** (length - t)
        node = tree.nodes[key]
        node.n[action] += weight
        node.w[action] += weight * record.value


def run_search(encoder: WalkEncoder, query, config: SearchConfig,
               on_simulation: Callable[[int, "SearchTree", list], None] | None = None,
               ) -> tuple[SearchTree, list[SimulationRecord]]:
    """Run the configured number of simulations on a fresh tree.

    Repeated paths are kept in the record list: the search's empirical
    emphasis is part of the training signal. ``on_simulation`` (if given)
    is called after each simulation with the 1-based count, the tree, and
    the records so far; evaluation uses it to snapshot rankings at
    intermediate budgets.
    """
    if config.num_simulations < 1:
        raise ValueError("num_simulations must be >= 1")
    tree = SearchTree(query)
    records: list[SimulationRecord] = []
    for i in range(config.num_simulations):
        records.append(simulate(tree, encoder, config))
        if on_simulation is not None:
            on_simulation(i + 1, tree, records)
    return tree, records
