"""Three Glass Puzzle environment: three containers with integer
capacities, twelve container actions plus STOP, success when any
container holds exactly the queried volume.

Provides the transition function, the one-hot status encoding, a
breadth-first solvability oracle, deterministic dataset generation with
train/test split, and BFS/DFS baselines that search with the target
disclosed.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ContractError, DataError
from .graph import STOP, CandidateSet, WalkState, env_step

__all__ = [
    "PuzzleSpec",
    "ACTION_NAMES",
    "NUM_ACTIONS",
    "VALUE_LIMIT",
    "STATUS_DIM",
    "puzzle_step",
    "is_success",
    "encode_status",
    "encode_action",
    "status_id",
    "status_of",
    "solvable",
    "generate_dataset",
    "PuzzleDataset",
    "write_dataset",
    "load_dataset",
    "SearchCounts",
    "bfs_dfs_steps",
    "PuzzleEnvironment",
]

VALUE_LIMIT = 50
STATUS_DIM = 6 * VALUE_LIMIT

# Index 0 is STOP; container actions follow in fixed table order.
ACTION_NAMES = (
    "STOP",
    "Empty A", "Fill A", "Pour A->B", "Pour A->C",
    "Empty B", "Fill B", "Pour B->A", "Pour B->C",
    "Empty C", "Fill C", "Pour C->A", "Pour C->B",
)
NUM_ACTIONS = len(ACTION_NAMES)


class PuzzleSpec(NamedTuple):
    """Container capacities (descending) and the queried volume."""
    cap_a: int
    cap_b: int
    cap_c: int
    target: int


Status = tuple[int, int, int]

_POUR = {3: (0, 1), 4: (0, 2), 7: (1, 0), 8: (1, 2), 11: (2, 0), 12: (2, 1)}
_EMPTY = {1: 0, 5: 1, 9: 2}
_FILL = {2: 0, 6: 1, 10: 2}


def puzzle_step(spec: PuzzleSpec, status: Status, action: int) -> Status:
    """Apply one action to the container contents.

    Fill sets a container to its capacity, Empty to zero, and Pour moves
    ``min(source contents, free space)``. Every action is always legal;
    no-ops (e.g. filling a full container) just return the same status.
    STOP leaves the contents unchanged; termination is the environment's
    concern.
    """
    if not 0 <= action < NUM_ACTIONS:
        raise IndexError("unknown puzzle action %r" % action)
    if action == STOP:
        return status
    caps = (spec.cap_a, spec.cap_b, spec.cap_c)
    contents = list(status)
    if action in _EMPTY:
        contents[_EMPTY[action]] = 0
    elif action in _FILL:
        i = _FILL[action]
        contents[i] = caps[i]
    else:
        src, dst = _POUR[action]
        moved = min(contents[src], caps[dst] - contents[dst])
        contents[src] -= moved
        contents[dst] += moved
    return (contents[0], contents[1], contents[2])


def is_success(spec: PuzzleSpec, status: Status) -> bool:
    return spec.target in status


def encode_status(spec: PuzzleSpec, status: Status) -> np.ndarray:
    """Six stacked 50-way one-hots: capacities A,B,C then contents a,b,c."""
    values = (spec.cap_a, spec.cap_b, spec.cap_c) + tuple(status)
    vec = np.zeros(STATUS_DIM, dtype=np.float32)
    for block, v in enumerate(values):
        if not 0 <= v < VALUE_LIMIT:
            raise ValueError("puzzle value %d outside [0, %d)" % (v, VALUE_LIMIT))
        vec[block * VALUE_LIMIT + v] = 1.0
    return vec


def encode_action(action: int) -> np.ndarray:
    vec = np.zeros(NUM_ACTIONS, dtype=np.float32)
    vec[action] = 1.0
    return vec


def status_id(status: Status) -> int:
    return (status[0] * VALUE_LIMIT + status[1]) * VALUE_LIMIT + status[2]


def status_of(node: int) -> Status:
    return (node // (VALUE_LIMIT * VALUE_LIMIT),
            (node // VALUE_LIMIT) % VALUE_LIMIT,
            node % VALUE_LIMIT)


def _successors(spec: PuzzleSpec, status: Status) -> list[Status]:
    return [puzzle_step(spec, status, a) for a in range(1, NUM_ACTIONS)]


def solvable(spec: PuzzleSpec, max_depth: int | None = None) -> bool:
    """Breadth-first reachability of a success status from empty containers."""
    start: Status = (0, 0, 0)
    if is_success(spec, start):
        return True
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        status, depth = frontier.popleft()
        if max_depth is not None and depth >= max_depth:
            continue
        for nxt in _successors(spec, status):
            if nxt in seen:
                continue
            if is_success(spec, nxt):
                return True
            seen.add(nxt)
            frontier.append((nxt, depth + 1))
    return False


@dataclass
class SearchCounts:
    """Node expansions and solution depth for one uninformed search."""
    expansions: int
    solution_length: int


def bfs_dfs_steps(spec: PuzzleSpec) -> tuple[SearchCounts, SearchCounts]:
    """Search effort of BFS and DFS with the target disclosed.

    Counts nodes expanded (popped and having children generated) before a
    success status is first popped; also reports the depth at which the
    success status sits on the search path. DFS expands children in
    action-index order.
    """
    if not solvable(spec):
        raise ContractError("bfs_dfs_steps requires a solvable puzzle")
    start: Status = (0, 0, 0)

    def run(depth_first: bool) -> SearchCounts:
        frontier: deque[tuple[Status, int]] = deque([(start, 0)])
        seen = {start}
        expansions = 0
        while frontier:
            status, depth = frontier.pop() if depth_first else frontier.popleft()
            if is_success(spec, status):
                return SearchCounts(expansions=expansions, solution_length=depth)
            expansions += 1
            children = _successors(spec, status)
            if depth_first:
                children = list(reversed(children))
            for nxt in children:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append((nxt, depth + 1))
        raise ContractError("search exhausted without success on a solvable puzzle")

    return run(False), run(True)


@dataclass
class PuzzleDataset:
    seed: int
    specs: list[PuzzleSpec]
    train_indices: list[int]
    test_indices: list[int]

    @property
    def train(self) -> list[PuzzleSpec]:
        return [self.specs[i] for i in self.train_indices]

    @property
    def test(self) -> list[PuzzleSpec]:
        return [self.specs[i] for i in self.test_indices]


def generate_dataset(seed: int, n_total: int = 600, n_train: int = 500,
                     ) -> PuzzleDataset:
    """Rejection-sample unique solvable puzzles, deterministically.

    Draws four integers from [1, 50), sorts the first three descending
    into capacities, rejects target >= largest capacity, duplicates, and
    unsolvable puzzles, until ``n_total`` specs are collected. The first
    ``n_train`` become the training split.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    specs: list[PuzzleSpec] = []
    seen: set[PuzzleSpec] = set()
    while len(specs) < n_total:
        draw = rng.integers(1, VALUE_LIMIT, size=4)
        caps = sorted(int(v) for v in draw[:3])
        spec = PuzzleSpec(caps[2], caps[1], caps[0], int(draw[3]))
        if spec.target >= spec.cap_a or spec in seen:
            continue
        if not solvable(spec):
            continue
        seen.add(spec)
        specs.append(spec)
    return PuzzleDataset(seed=seed, specs=specs,
                         train_indices=list(range(n_train)),
                         test_indices=list(range(n_train, n_total)))


def write_dataset(out_dir: str | Path, dataset: PuzzleDataset) -> None:
    """One spec per line ("A B C q") plus a JSON split manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["%d %d %d %d" % spec for spec in dataset.specs]
    (out / "puzzles.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest = {"seed": dataset.seed, "count": len(dataset.specs),
                "train": dataset.train_indices, "test": dataset.test_indices}
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(data_dir: str | Path) -> PuzzleDataset:
    data = Path(data_dir)
    try:
        lines = (data / "puzzles.txt").read_text(encoding="utf-8").splitlines()
        manifest = json.loads((data / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError("puzzle dataset missing: %s" % exc) from None
    specs = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataError("puzzles.txt:%d: expected 'A B C q', got %r" % (lineno, line))
        specs.append(PuzzleSpec(*(int(p) for p in parts)))
    return PuzzleDataset(seed=int(manifest["seed"]), specs=specs,
                         train_indices=list(manifest["train"]),
                         test_indices=list(manifest["test"]))


class PuzzleEnvironment:
    """Puzzle as an implicit graph: nodes are container statuses, edges
    are the twelve container actions, the query is the target volume."""

    kind = "puzzle"

    def __init__(self, horizon: int = 12):
        self.horizon = horizon

    def initial_state(self, query: PuzzleSpec) -> WalkState:
        return WalkState(query=query, node=status_id((0, 0, 0)), t=0)

    def feasible(self, state: WalkState) -> CandidateSet:
        if state.terminal:
            raise ContractError("feasible called on a terminal state")
        if state.t >= self.horizon:
            return CandidateSet(edges=())
        spec: PuzzleSpec = state.query
        status = status_of(state.node)
        edges = tuple(
            (a, status_id(puzzle_step(spec, status, a)))
            for a in range(1, NUM_ACTIONS)
        )
        return CandidateSet(edges=edges)

    def step(self, state: WalkState, action: int, cands: CandidateSet) -> WalkState:
        return env_step(state, action, cands)

    def reward(self, state: WalkState) -> float:
        if not state.terminal:
            raise ContractError("reward called on a non-terminal state")
        return 1.0 if is_success(state.query, status_of(state.node)) else 0.0

    def node_name(self, node: int) -> str:
        return "(%d,%d,%d)" % status_of(node)

    def edge_name(self, edge_type: int) -> str:
        return ACTION_NAMES[edge_type]
