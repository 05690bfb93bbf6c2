"""Shared fixtures: tiny graphs, tiny models, and a synthetic KB builder."""

import numpy as np
import pytest

from mwalk.graph import KgEnvironment, KnowledgeGraph, Query
from mwalk.model import (KbcFeaturizer, ModelConfig, PuzzleFeaturizer,
                         WalkerModel)


def build_graph(triples, extra_relations=()):
    """Construct a graph directly from (head, rel, tail) string triples."""
    graph = KnowledgeGraph()
    for head, rel, tail in triples:
        h = graph.intern_entity(head)
        r = graph.intern_relation(rel)
        t = graph.intern_entity(tail)
        graph.add_edge(h, r, t)
        graph.add_edge(t, graph.inverse_of(r), h)
    for rel in extra_relations:
        graph.intern_relation(rel)
    graph.freeze()
    return graph


def tiny_kbc_model(graph, seed=0, state_dim=4, gru_hidden=5, entity_dim=2,
                   relation_dim=3, stop_hidden=2, dtype=np.float32):
    cfg = ModelConfig(state_dim=state_dim, gru_hidden=gru_hidden,
                      stop_hidden=stop_hidden, stop_activation="tanh")
    model = WalkerModel(cfg, KbcFeaturizer(graph, entity_dim=entity_dim,
                                           relation_dim=relation_dim))
    params = model.init_params(np.random.default_rng(seed), dtype=dtype)
    return model, params


def tiny_puzzle_model(seed=0, state_dim=4, gru_hidden=6, stop_hidden=2,
                      dtype=np.float32):
    cfg = ModelConfig(state_dim=state_dim, gru_hidden=gru_hidden,
                      stop_hidden=stop_hidden, stop_activation="relu")
    model = WalkerModel(cfg, PuzzleFeaturizer(query_dim=gru_hidden))
    params = model.init_params(np.random.default_rng(seed), dtype=dtype)
    return model, params


@pytest.fixture
def chain_graph():
    """a -r1-> b -r2-> c plus a distractor edge a -r3-> d."""
    return build_graph([("a", "r1", "b"), ("b", "r2", "c"), ("a", "r3", "d")],
                       extra_relations=["goal"])


@pytest.fixture
def one_hop_graph():
    """Source with two outgoing edges; exactly one leads to the answer."""
    return build_graph([("src", "good", "answer"), ("src", "bad", "decoy")],
                       extra_relations=["goal"])


def one_hop_query(graph):
    return Query(source=graph.entity_id["src"],
                 relation=graph.relation_id["goal"],
                 target=graph.entity_id["answer"])


def make_synthetic_kb(rng, n_entities=200, n_noise_edges=200):
    """Compositional KB: answer(x) = follow(step_one) then follow(step_two).

    The queried relation holds exactly where the two-hop path exists; its
    facts are split into train/test so test queries have no direct edge.
    Two noise relations add random edges. Five base relations total.
    """
    names = ["e%03d" % i for i in range(n_entities)]
    perm_one = rng.permutation(n_entities)
    perm_two = rng.permutation(n_entities)
    triples = []
    for i in range(n_entities):
        triples.append((names[i], "step_one", names[perm_one[i]]))
        triples.append((names[i], "step_two", names[perm_two[i]]))
    answers = [(names[i], "combo", names[perm_two[perm_one[i]]])
               for i in range(n_entities)]
    for rel in ("noise_a", "noise_b"):
        for _ in range(n_noise_edges // 2):
            h = int(rng.integers(n_entities))
            t = int(rng.integers(n_entities))
            triples.append((names[h], rel, names[t]))
    order = rng.permutation(n_entities)
    split = int(0.8 * n_entities)
    train_answers = [answers[i] for i in order[:split]]
    test_answers = [answers[i] for i in order[split:]]
    return triples, train_answers, test_answers
