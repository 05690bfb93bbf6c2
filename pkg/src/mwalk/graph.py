"""Knowledge-graph environment: triple loading with inverse-edge
augmentation, neighborhood queries, the deterministic state transition,
and the terminal reward.

The walk types defined here (:class:`WalkState`, :class:`CandidateSet`)
are shared by every environment. Action index 0 is always STOP; indices
1..k map onto the node's outgoing edges in a fixed deterministic order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import ContractError, DataError

__all__ = [
    "STOP",
    "Query",
    "WalkState",
    "CandidateSet",
    "KnowledgeGraph",
    "load_triples",
    "feasible_actions",
    "env_step",
    "terminal_reward",
    "KgEnvironment",
]

STOP = 0


@dataclass(frozen=True)
class Query:
    """A (source entity, relation, optional target) triple completion task."""
    source: int
    relation: int
    target: Optional[int] = None


@dataclass(frozen=True)
class WalkState:
    """Agent position plus the walk so far; immutable and replayable."""
    query: object
    node: int
    t: int
    history: tuple[int, ...] = ()
    terminal: bool = False

    @property
    def prediction(self) -> int:
        return self.node


@dataclass(frozen=True)
class CandidateSet:
    """Feasible actions at a state: STOP at index 0, then the outgoing
    edges as (edge type id, destination node id) pairs."""
    edges: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return 1 + len(self.edges)

    def destination(self, action: int) -> int:
        return self.edges[action - 1][1]

    def edge_type(self, action: int) -> int:
        return self.edges[action - 1][0]


class KnowledgeGraph:
    """Immutable entity/relation vocabularies plus sorted adjacency lists.

    Every loaded training edge has a synthesized mirror edge under the
    inverse relation (base name + marker). Relation ids are interned in
    (base, inverse) pairs so ``rel_id ^ 1`` flips direction.
    """

    def __init__(self, inverse_marker: str = "_inv"):
        self.inverse_marker = inverse_marker
        self.entities: list[str] = []
        self.entity_id: dict[str, int] = {}
        self.relations: list[str] = []
        self.relation_id: dict[str, int] = {}
        self._adjacency: dict[int, list[tuple[int, int]]] = {}
        self._edge_sets: dict[int, set[tuple[int, int]]] = {}
        self._frozen = False

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def intern_entity(self, name: str) -> int:
        eid = self.entity_id.get(name)
        if eid is None:
            eid = len(self.entities)
            self.entity_id[name] = eid
            self.entities.append(name)
        return eid

    def intern_relation(self, name: str) -> int:
        """Intern a base relation together with its inverse partner."""
        rid = self.relation_id.get(name)
        if rid is None:
            rid = len(self.relations)
            self.relation_id[name] = rid
            self.relations.append(name)
            inv = name + self.inverse_marker
            self.relation_id[inv] = rid + 1
            self.relations.append(inv)
        return rid

    def inverse_of(self, rel_id: int) -> int:
        return rel_id ^ 1

    def add_edge(self, head: int, rel: int, tail: int) -> None:
        if self._frozen:
            raise ContractError("graph is frozen; edges cannot be added")
        self._edge_sets.setdefault(head, set()).add((rel, tail))

    def freeze(self) -> None:
        """Sort adjacency by (relation id, tail id) and make it immutable."""
        self._adjacency = {
            head: sorted(edges) for head, edges in self._edge_sets.items()
        }
        self._edge_sets = {}
        self._frozen = True

    def neighbors(self, node: int) -> list[tuple[int, int]]:
        return self._adjacency.get(node, [])

    def out_degree(self, node: int) -> int:
        return len(self._adjacency.get(node, ()))

    def num_edges(self) -> int:
        return sum(len(v) for v in self._adjacency.values())


def _parse_triple_file(path: Path) -> Iterable[tuple[str, str, str]]:
    with open(path, encoding="utf-8") as fh:
        any_line = False
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3 or not all(fields):
                raise DataError("%s:%d: expected 'head<TAB>relation<TAB>tail', got %r"
                                % (path, lineno, line))
            any_line = True
            yield fields[0], fields[1], fields[2]
        if not any_line:
            raise DataError("%s: no triples found" % path)


def load_triples(train_path: str | Path,
                 valid_path: str | Path | None = None,
                 test_path: str | Path | None = None,
                 inverse_marker: str = "_inv",
                 ) -> tuple[KnowledgeGraph, list[Query], list[Query], list[Query]]:
    """Build a graph from the training split and query lists per split.

    Only training triples become edges (plus their inverse mirrors);
    validation/test lines only produce queries, though their entities and
    relations are retained in the vocabularies. Duplicate triples
    collapse to a single edge.
    """
    graph = KnowledgeGraph(inverse_marker)
    raw_relations: set[str] = set()
    splits: list[list[tuple[str, str, str]]] = []
    for path in (train_path, valid_path, test_path):
        if path is None:
            splits.append([])
            continue
        triples = list(_parse_triple_file(Path(path)))
        raw_relations.update(r for _, r, _ in triples)
        splits.append(triples)
    for name in sorted(raw_relations):
        if name + inverse_marker in raw_relations:
            raise DataError(
                "inverse marker %r collides with raw relation %r"
                % (inverse_marker, name + inverse_marker))

    queries: list[list[Query]] = []
    for split_idx, triples in enumerate(splits):
        split_queries = []
        for head, rel, tail in triples:
            h = graph.intern_entity(head)
            r = graph.intern_relation(rel)
            t = graph.intern_entity(tail)
            if split_idx == 0:
                graph.add_edge(h, r, t)
                graph.add_edge(t, graph.inverse_of(r), h)
            split_queries.append(Query(source=h, relation=r, target=t))
        queries.append(split_queries)
    graph.freeze()
    return graph, queries[0], queries[1], queries[2]


def feasible_actions(graph: KnowledgeGraph, state: WalkState, t_max: int,
                     masked: frozenset[tuple[int, int, int]] = frozenset(),
                     ) -> CandidateSet:
    """STOP plus all outgoing edges of the current node.

    On the final step (t == t_max) only STOP remains. ``masked`` hides
    specific (head, relation, tail) edges, used to withhold the queried
    fact itself during training walks.
    """
    if state.terminal:
        raise ContractError("feasible_actions called on a terminal state")
    if state.t >= t_max:
        return CandidateSet(edges=())
    edges = graph.neighbors(state.node)
    if masked:
        node = state.node
        edges = [e for e in edges if (node, e[0], e[1]) not in masked]
    return CandidateSet(edges=tuple(edges))


def env_step(state: WalkState, action: int, cands: CandidateSet) -> WalkState:
    """Deterministic transition: STOP terminates with the current node as
    the prediction; any other action moves along the chosen edge."""
    if state.terminal:
        raise ContractError("env_step called on a terminal state")
    if not 0 <= action < len(cands):
        raise IndexError("action %d out of range for %d candidates"
                         % (action, len(cands)))
    if action == STOP:
        return WalkState(query=state.query, node=state.node, t=state.t,
                         history=state.history + (STOP,), terminal=True)
    return WalkState(query=state.query, node=cands.destination(action),
                     t=state.t + 1, history=state.history + (action,))


def terminal_reward(state: WalkState, target: int) -> float:
    if not state.terminal:
        raise ContractError("terminal_reward called on a non-terminal state")
    return 1.0 if state.node == target else 0.0


class KgEnvironment:
    """Binds a graph and horizon into the walk interface used by search,
    training, and inference."""

    kind = "kbc"

    def __init__(self, graph: KnowledgeGraph, horizon: int,
                 mask_query_edge: bool = True):
        self.graph = graph
        self.horizon = horizon
        self.mask_query_edge = mask_query_edge

    def initial_state(self, query: Query) -> WalkState:
        return WalkState(query=query, node=query.source, t=0)

    def _mask(self, query: Query) -> frozenset[tuple[int, int, int]]:
        if not self.mask_query_edge or query.target is None:
            return frozenset()
        inv = self.graph.inverse_of(query.relation)
        return frozenset({(query.source, query.relation, query.target),
                          (query.target, inv, query.source)})

    def feasible(self, state: WalkState) -> CandidateSet:
        return feasible_actions(self.graph, state, self.horizon,
                                self._mask(state.query))

    def step(self, state: WalkState, action: int, cands: CandidateSet) -> WalkState:
        return env_step(state, action, cands)

    def reward(self, state: WalkState) -> float:
        return terminal_reward(state, state.query.target)

    def node_name(self, node: int) -> str:
        return self.graph.entities[node]

    def edge_name(self, edge_type: int) -> str:
        return self.graph.relations[edge_type]
