import math

import numpy as np
import pytest

from mwalk.graph import STOP, KgEnvironment, Query
from mwalk.mcts import (SearchConfig, SearchTree, backup, puct_scores,
                        puct_select, run_search, simulate)
from mwalk.model import WalkEncoder
from mwalk.puzzle import PuzzleEnvironment, PuzzleSpec

from conftest import build_graph, one_hop_query, tiny_kbc_model, tiny_puzzle_model


def test_puct_all_zero_counts_scores_vanish_and_prior_breaks_tie():
    from mwalk.mcts import TreeNode

    n = np.zeros(3)
    w = np.zeros(3)
    prior = np.array([0.2, 0.5, 0.3])
    scores = puct_scores(n, w, prior, c=2.0, beta=0.5)
    assert np.allclose(scores, 0.0)
    # with every score vanishing, selection follows the prior (the limit
    # of the rule as the visit total goes to zero)
    node = TreeNode(state=None, enc=None, prior=prior,
                    q_values=np.full(3, 0.5))
    assert puct_select(node, c=2.0, beta=0.5) == 1
    # uniform prior falls back to the lowest index
    node_uniform = TreeNode(state=None, enc=None, prior=np.full(3, 1 / 3),
                            q_values=np.full(3, 0.5))
    assert puct_select(node_uniform, c=2.0, beta=0.5) == 0


def test_puct_hand_computed_example():
    n = np.array([0.0, 10.0])
    w = np.array([0.0, 9.0])
    prior = np.array([0.5, 0.5])
    scores = puct_scores(n, w, prior, c=2.0, beta=0.5)
    expected0 = 2.0 * math.sqrt(0.5) * math.sqrt(10.0) / 1.0
    expected1 = 2.0 * math.sqrt(0.5) * math.sqrt(10.0) / 11.0 + 0.9
    assert abs(scores[0] - expected0) < 1e-9
    assert abs(scores[1] - expected1) < 1e-9
    assert np.argmax(scores) == 0


def test_puct_value_term_dominates_at_high_counts():
    n = np.array([1000.0, 1000.0])
    w = np.array([900.0, 100.0])
    for prior in ([0.5, 0.5], [0.01, 0.99], [0.9, 0.1]):
        scores = puct_scores(n, w, np.array(prior), c=2.0, beta=0.5)
        assert np.argmax(scores) == 0


def test_puct_exploration_term_decreases_in_own_count():
    prior = np.array([0.4, 0.6])
    w_over_n = 0.5
    values = []
    for own_n in [1.0, 2.0, 5.0, 20.0, 100.0]:
        n = np.array([own_n, 10.0])
        w = np.array([w_over_n * own_n, 5.0])
        scores = puct_scores(n, w, prior, c=1.0, beta=0.5)
        values.append(scores[0] - w_over_n)  # isolate the exploration term
    assert all(b < a for a, b in zip(values, values[1:]))


@pytest.fixture
def one_hop_setup(one_hop_graph):
    model, params = tiny_kbc_model(one_hop_graph, seed=3)
    env = KgEnvironment(one_hop_graph, horizon=2, mask_query_edge=False)
    query = one_hop_query(one_hop_graph)
    encoder = WalkEncoder(model, params, env)
    return encoder, query


def test_simulate_horizon_zero_forces_stop_at_root(one_hop_graph):
    model, params = tiny_kbc_model(one_hop_graph, seed=3)
    env = KgEnvironment(one_hop_graph, horizon=0, mask_query_edge=False)
    query = one_hop_query(one_hop_graph)
    encoder = WalkEncoder(model, params, env)
    tree = SearchTree(query)
    record = simulate(tree, encoder, SearchConfig())
    assert record.actions == [STOP]
    assert record.final_node == query.source
    assert record.final_state.terminal


def test_simulate_deterministic_across_fresh_trees(one_hop_setup):
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=8, c=2.0, beta=0.5, gamma=0.99)
    _, records_a = run_search(encoder, query, cfg)
    _, records_b = run_search(encoder, query, cfg)
    assert [r.actions for r in records_a] == [r.actions for r in records_b]
    assert [r.value for r in records_a] == [r.value for r in records_b]


def test_first_simulation_is_a_valid_terminated_walk(one_hop_setup):
    encoder, query = one_hop_setup
    tree = SearchTree(query)
    record = simulate(tree, encoder, SearchConfig(c=2.0, beta=0.5))
    assert record.actions[-1] == STOP
    assert 0 <= record.length <= encoder.env.horizon
    assert record.final_state.terminal
    assert len(record.keys) == len(record.actions) == len(record.nodes)


def test_backup_gamma_one_unit_increments(one_hop_setup):
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=12, c=2.0, beta=0.5, gamma=1.0)
    tree, records = run_search(encoder, query, cfg)
    for record in records:
        assert all(a == STOP or a > 0 for a in record.actions)
    total_root_n = tree.nodes[tree.root_key(query.source)].n.sum()
    assert abs(total_root_n - len(records)) < 1e-12  # every path starts at the root


def test_backup_discount_weights_match_hand_computation():
    # path of length 2 with gamma 0.5 and terminal value 0.8: the root
    # edge gets n += 0.25, w += 0.2; the STOP edge gets n += 1, w += 0.8
    from mwalk.graph import WalkState
    from mwalk.mcts import SimulationRecord, TreeNode

    def bare_node(k):
        return TreeNode(state=None, enc=None,
                        prior=np.full(k, 1.0 / k), q_values=np.full(k, 0.5))

    tree = SearchTree(query="q")
    keys = [("q", 0), ("q", 0, 2, 1), ("q", 0, 2, 1, 1, 2)]
    for key, k in zip(keys, (3, 2, 1)):
        tree.nodes[key] = bare_node(k)
    record = SimulationRecord(
        query="q", keys=keys, actions=[2, 1, STOP], nodes=[0, 1, 2],
        value=0.8,
        final_state=WalkState(query="q", node=2, t=2, terminal=True))
    backup(tree, record, gamma=0.5)
    assert abs(tree.nodes[keys[0]].n[2] - 0.25) < 1e-12
    assert abs(tree.nodes[keys[0]].w[2] - 0.2) < 1e-12
    assert abs(tree.nodes[keys[1]].n[1] - 0.5) < 1e-12
    assert abs(tree.nodes[keys[1]].w[1] - 0.4) < 1e-12
    assert abs(tree.nodes[keys[2]].n[STOP] - 1.0) < 1e-12
    assert abs(tree.nodes[keys[2]].w[STOP] - 0.8) < 1e-12
    # a second identical backup doubles n and w, leaving w/n unchanged
    backup(tree, record, gamma=0.5)
    assert abs(tree.nodes[keys[0]].n[2] - 0.5) < 1e-12
    assert abs(tree.nodes[keys[0]].w[2] / tree.nodes[keys[0]].n[2] - 0.8) < 1e-12


def test_backup_conservation_delta_w_equals_delta_n_times_value(one_hop_setup):
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=16, c=2.0, beta=0.5, gamma=0.7)
    tree = SearchTree(query)
    for _ in range(cfg.num_simulations):
        before_n = {k: node.n.copy() for k, node in tree.nodes.items()}
        before_w = {k: node.w.copy() for k, node in tree.nodes.items()}
        record = simulate(tree, encoder, cfg)
        for key, node in tree.nodes.items():
            dn = node.n - before_n.get(key, np.zeros_like(node.n))
            dw = node.w - before_w.get(key, np.zeros_like(node.w))
            assert np.allclose(dw, dn * record.value, atol=1e-12)


def test_mean_value_stays_in_unit_interval(one_hop_setup):
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=32, c=2.0, beta=0.5, gamma=0.95)
    tree, _ = run_search(encoder, query, cfg)
    for node in tree.nodes.values():
        mask = node.n > 0
        ratios = node.w[mask] / node.n[mask]
        assert np.all(ratios > 0.0) and np.all(ratios < 1.0)


def test_identical_paths_share_statistics_and_ratios(one_hop_setup):
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=2, c=0.0, beta=0.5, gamma=1.0)
    # c=0 disables exploration, so both simulations repeat the same path
    tree, records = run_search(encoder, query, cfg)
    assert records[0].actions == records[1].actions
    root = tree.nodes[tree.root_key(query.source)]
    a = records[0].actions[0]
    assert root.n[a] == 2.0
    assert abs(root.w[a] / root.n[a] - records[0].value) < 1e-12


def test_tree_keys_distinguish_paths_by_prefix(one_hop_setup):
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=24, c=3.0, beta=0.5, gamma=0.99)
    tree, records = run_search(encoder, query, cfg)
    # two records share tree entries exactly while their prefixes agree
    for rec in records:
        for depth, key in enumerate(rec.keys):
            expected = tree.root_key(query.source)
            for a, n in zip(rec.actions[:depth], rec.nodes[1:depth + 1]):
                expected = expected + (a, n)
            assert key == expected


def test_run_search_with_one_simulation_equals_simulate(one_hop_setup):
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=1, c=2.0, beta=0.5)
    _, records = run_search(encoder, query, cfg)
    fresh_tree = SearchTree(query)
    record = simulate(fresh_tree, encoder, cfg)
    assert records[0].actions == record.actions
    assert records[0].value == record.value


def test_run_search_rejects_zero_budget(one_hop_setup):
    encoder, query = one_hop_setup
    with pytest.raises(ValueError):
        run_search(encoder, query, SearchConfig(num_simulations=0))


def test_search_prefers_high_value_edge_with_oracle_friendly_params(one_hop_graph):
    """With the stop head forced low and one candidate's value forced
    high, the most-visited root action should be that edge."""
    model, params = tiny_kbc_model(one_hop_graph, seed=11)
    env = KgEnvironment(one_hop_graph, horizon=2, mask_query_edge=False)
    query = one_hop_query(one_hop_graph)
    good_rel = one_hop_graph.relation_id["good"]
    # craft embeddings so the "good" relation candidate gets a large score:
    # history encoding is forced positive via biases, and the good
    # relation's embedding drives the candidate encoding strongly positive.
    for name, t in params.params.items():
        t.data[...] = 0.0
    m = model.config.state_dim
    params["history_enc.b0"].data[...] = 1.0
    params["history_enc.w1"].data[...] = np.eye(m, dtype=np.float32)
    params["action_enc.w0"].data[...] = 0.0
    params["action_enc.b0"].data[...] = 0.0
    # map the good relation's first embedding coordinate into every
    # candidate-encoder output through positive weights
    params["relation_emb"].data[good_rel, 0] = 5.0
    ent_dim = model.featurizer.node_dim
    params["action_enc.w0"].data[ent_dim, :] = 1.0
    params["action_enc.w1"].data[...] = np.eye(m, dtype=np.float32)
    params["stop_head.b1"].data[...] = -5.0
    encoder = WalkEncoder(model, params, env)
    tree, records = run_search(encoder, query,
                               SearchConfig(num_simulations=32, c=0.5,
                                            beta=0.5, gamma=0.99))
    root = tree.nodes[tree.root_key(query.source)]
    best = int(np.argmax(root.n))
    assert best != STOP
    assert root.enc.cands.edge_type(best) == good_rel


def test_grounded_search_backs_up_true_rewards(one_hop_setup):
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=16, c=2.0, beta=0.5, gamma=0.99,
                       ground_terminal_value=True)
    _, records = run_search(encoder, query, cfg)
    for rec in records:
        assert rec.value == encoder.env.reward(rec.final_state)
        assert rec.value in (0.0, 1.0)


def test_ungrounded_search_backs_up_model_values(one_hop_setup):
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=16, c=2.0, beta=0.5, gamma=0.99)
    tree, records = run_search(encoder, query, cfg)
    for rec in records:
        assert rec.value == float(tree.nodes[rec.keys[-1]].q_values[STOP])
        assert 0.0 < rec.value < 1.0


def test_grounded_search_concentrates_on_found_success(one_hop_setup):
    """Once a simulation ends on the true answer, later simulations
    should mostly repeat that path (its mean value dominates selection)."""
    encoder, query = one_hop_setup
    cfg = SearchConfig(num_simulations=32, c=2.0, beta=0.5, gamma=0.99,
                       ground_terminal_value=True)
    _, records = run_search(encoder, query, cfg)
    rewards = [encoder.env.reward(r.final_state) for r in records]
    if 1.0 in rewards:
        first = rewards.index(1.0)
        after = rewards[first:]
        assert sum(after) / len(after) > 0.5


def test_puzzle_search_runs_and_respects_horizon():
    model, params = tiny_puzzle_model(seed=2)
    env = PuzzleEnvironment(horizon=3)
    spec = PuzzleSpec(8, 5, 3, 4)
    encoder = WalkEncoder(model, params, env)
    tree, records = run_search(encoder, spec,
                               SearchConfig(num_simulations=40, c=0.5, beta=0.2))
    assert len(records) == 40
    for rec in records:
        assert rec.length <= 3
        assert rec.actions[-1] == STOP
        assert 0.0 < rec.value < 1.0
