"""The walker model: candidate-action encoding, max-pooled action
summary, GRU history encoding, and the shared policy/Q scoring heads.

One score vector drives both heads: Q-values are its element-wise
sigmoid and the policy is its temperature softmax, so a Q-learning step
on any action's value moves the policy the same way. Feature wiring is
environment-specific and lives in the featurizers; the model itself only
sees feature vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import puzzle as pz
from . import tensor as T
from .graph import CandidateSet, KnowledgeGraph, Query, WalkState
from .nn import ParamStore, add_fcn, add_gru, fcn_forward, gru_cell

__all__ = [
    "ModelConfig",
    "PuzzleFeaturizer",
    "KbcFeaturizer",
    "EncodedState",
    "ActionScores",
    "WalkerModel",
    "WalkEncoder",
    "puzzle_model_config",
    "kbc_model_config",
]


@dataclass(frozen=True)
class ModelConfig:
    state_dim: int          # width M shared by h_S, h_A and candidate vectors
    gru_hidden: int = 64
    stop_hidden: int = 16
    stop_activation: str = "tanh"
    # Candidate/history encoders: ReLU on the hidden layer, linear output.
    # A nonlinearity on the output layer would pin the inner-product edge
    # scores at zero whenever the two encodings have disjoint supports,
    # killing their gradients.
    enc_activations: tuple[str, str] = ("relu", "linear")
    tau: float = 1.0


def puzzle_model_config(state_dim: int = 32, tau: float = 1.0) -> ModelConfig:
    return ModelConfig(state_dim=state_dim, stop_activation="relu", tau=tau)


def kbc_model_config(state_dim: int = 64, tau: float = 1.0) -> ModelConfig:
    return ModelConfig(state_dim=state_dim, stop_activation="tanh", tau=tau)


class PuzzleFeaturizer:
    """Constant one-hot node/action features; learned query embedding."""

    def __init__(self, query_dim: int = 64, query_vocab: int = pz.VALUE_LIMIT):
        self.node_dim = pz.STATUS_DIM
        self.edge_dim = pz.NUM_ACTIONS
        self.query_dim = query_dim
        self.query_vocab = query_vocab

    def register_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add("query_emb", rng.uniform(-0.1, 0.1,
                                           size=(self.query_vocab, self.query_dim)))

    def node_features(self, params: ParamStore, query: pz.PuzzleSpec,
                      node: int) -> T.Tensor:
        return T.Tensor(pz.encode_status(query, pz.status_of(node)),
                        dtype=params.dtype)

    def candidate_features(self, params: ParamStore, query: pz.PuzzleSpec,
                           cands: CandidateSet) -> T.Tensor:
        k = len(cands.edges)
        mat = np.zeros((k, self.node_dim + self.edge_dim), dtype=params.dtype)
        actions = np.fromiter((a for a, _ in cands.edges), dtype=np.int64,
                              count=k)
        dests = np.fromiter((d for _, d in cands.edges), dtype=np.int64,
                            count=k)
        lim = pz.VALUE_LIMIT
        rows = np.arange(k)
        mat[:, query.cap_a] = 1.0
        mat[:, lim + query.cap_b] = 1.0
        mat[:, 2 * lim + query.cap_c] = 1.0
        mat[rows, 3 * lim + dests // (lim * lim)] = 1.0
        mat[rows, 4 * lim + (dests // lim) % lim] = 1.0
        mat[rows, 5 * lim + dests % lim] = 1.0
        mat[rows, self.node_dim + actions] = 1.0
        return T.Tensor(mat)

    def query_features(self, params: ParamStore, query: pz.PuzzleSpec) -> T.Tensor:
        return T.row(params["query_emb"], query.target)


class KbcFeaturizer:
    """Learned entity and relation embeddings; the query feature is the
    concatenation of the source-entity and relation embeddings."""

    def __init__(self, graph: KnowledgeGraph, entity_dim: int = 4,
                 relation_dim: int = 64):
        self.n_entities = graph.n_entities
        self.n_relations = graph.n_relations
        self.node_dim = entity_dim
        self.edge_dim = relation_dim
        self.query_dim = entity_dim + relation_dim

    def register_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add("entity_emb", rng.uniform(-0.1, 0.1,
                                            size=(self.n_entities, self.node_dim)))
        store.add("relation_emb", rng.uniform(-0.1, 0.1,
                                              size=(self.n_relations, self.edge_dim)))

    def node_features(self, params: ParamStore, query: Query, node: int) -> T.Tensor:
        return T.row(params["entity_emb"], node)

    def candidate_features(self, params: ParamStore, query: Query,
                           cands: CandidateSet) -> T.Tensor:
        rels = [edge_type for edge_type, _ in cands.edges]
        tails = [dest for _, dest in cands.edges]
        return T.concat([T.rows(params["entity_emb"], tails),
                         T.rows(params["relation_emb"], rels)], axis=1)

    def query_features(self, params: ParamStore, query: Query) -> T.Tensor:
        return T.concat([T.row(params["entity_emb"], query.source),
                         T.row(params["relation_emb"], query.relation)])


@dataclass
class EncodedState:
    """Vector view of one walk state: GRU history encoding, per-candidate
    action encodings, and their coordinate-wise max-pool."""
    q_t: T.Tensor
    h_cand: Optional[T.Tensor]   # (k, M) or None when the node has no edges
    h_pool: T.Tensor             # (M,)
    cands: CandidateSet


@dataclass
class ActionScores:
    """Shared pre-activation scores with both heads applied.

    ``u[0]`` is the STOP score from the scalar head; ``u[1:]`` are inner
    products between the history encoding and each candidate encoding.
    """
    u: T.Tensor
    q_values: T.Tensor
    policy: T.Tensor


class WalkerModel:
    def __init__(self, config: ModelConfig, featurizer):
        self.config = config
        self.featurizer = featurizer
        cand_in = featurizer.node_dim + featurizer.edge_dim
        self.gru_input_dim = 2 * config.state_dim + featurizer.node_dim
        self._cand_widths = (cand_in, config.state_dim, config.state_dim)
        self._needs_query_proj = featurizer.query_dim != config.gru_hidden

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> ParamStore:
        store = ParamStore(dtype)
        self.featurizer.register_params(store, rng)
        cfg = self.config
        add_fcn(store, "action_enc", self._cand_widths, rng)
        add_fcn(store, "history_enc",
                (cfg.gru_hidden, cfg.state_dim, cfg.state_dim), rng)
        add_fcn(store, "stop_head",
                (2 * cfg.state_dim, cfg.stop_hidden, 1), rng)
        add_gru(store, "gru", self.gru_input_dim, cfg.gru_hidden, rng)
        if self._needs_query_proj:
            add_fcn(store, "query_proj",
                    (self.featurizer.query_dim, cfg.gru_hidden), rng)
        return store

    # -- state encoding -------------------------------------------------

    def encode_candidates(self, params: ParamStore, query,
                          cands: CandidateSet) -> Optional[T.Tensor]:
        """Apply the shared candidate encoder to every edge candidate."""
        if not cands.edges:
            return None
        feats = self.featurizer.candidate_features(params, query, cands)
        return fcn_forward(params, "action_enc", feats, self.config.enc_activations)

    def pool_actions(self, params: ParamStore,
                     h_cand: Optional[T.Tensor]) -> T.Tensor:
        """Coordinate-wise max over candidate encodings; zero vector when
        the node has no outgoing edges."""
        if h_cand is None:
            return T.Tensor(np.zeros(self.config.state_dim, dtype=params.dtype))
        return T.max_rows(h_cand)

    def _initial_hidden(self, params: ParamStore, query) -> T.Tensor:
        qvec = self.featurizer.query_features(params, query)
        if self._needs_query_proj:
            return fcn_forward(params, "query_proj", qvec, "linear")
        return qvec

    def init_history(self, params: ParamStore, query, source_node: int) -> T.Tensor:
        """First GRU step: hidden state from the query features, input
        [0, 0, source-node features]."""
        zeros = T.Tensor(np.zeros(2 * self.config.state_dim, dtype=params.dtype))
        node_vec = self.featurizer.node_features(params, query, source_node)
        x = T.concat([zeros, node_vec])
        return gru_cell(params, "gru", self._initial_hidden(params, query), x)

    def update_history(self, params: ParamStore, query, q_t: T.Tensor,
                       h_pool: T.Tensor, h_chosen: T.Tensor,
                       next_node: int) -> T.Tensor:
        """One GRU step on [pooled summary, chosen-action encoding,
        next-node features]; the first two come from the previous step."""
        node_vec = self.featurizer.node_features(params, query, next_node)
        x = T.concat([h_pool, h_chosen, node_vec])
        return gru_cell(params, "gru", q_t, x)

    def encode_state(self, params: ParamStore, query, cands: CandidateSet,
                     q_t: T.Tensor) -> EncodedState:
        h_cand = self.encode_candidates(params, query, cands)
        return EncodedState(q_t=q_t, h_cand=h_cand,
                            h_pool=self.pool_actions(params, h_cand), cands=cands)

    # -- scoring ---------------------------------------------------------

    def score_actions(self, params: ParamStore, enc: EncodedState) -> ActionScores:
        """Scores for STOP and each edge, with the Q and policy heads.

        STOP is scored by the small scalar head on [history encoding,
        pooled summary]; edges by inner product with the history encoding.
        """
        h_s = fcn_forward(params, "history_enc", enc.q_t, self.config.enc_activations)
        u0 = fcn_forward(params, "stop_head", T.concat([h_s, enc.h_pool]),
                         (self.config.stop_activation, "linear"))
        if enc.h_cand is None:
            u = u0
        else:
            u = T.concat([u0, T.matmul(enc.h_cand, h_s)])
        return ActionScores(u=u, q_values=T.sigmoid_vec(u),
                            policy=T.softmax_tau(u, self.config.tau))

    def terminal_value(self, params: ParamStore, enc: EncodedState) -> T.Tensor:
        """Value of a state if stopped here: Q of the STOP action."""
        return T.pick(self.score_actions(params, enc).q_values, 0)


class WalkEncoder:
    """Stateless helper that walks an environment while maintaining the
    model encodings, shared by search, beam decoding, and the trainers."""

    def __init__(self, model: WalkerModel, params: ParamStore, env):
        self.model = model
        self.params = params
        self.env = env

    def root(self, query) -> tuple[WalkState, EncodedState]:
        state = self.env.initial_state(query)
        q0 = self.model.init_history(self.params, query, state.node)
        return state, self.model.encode_state(
            self.params, query, self.env.feasible(state), q0)

    def child(self, state: WalkState, enc: EncodedState, action: int,
              ) -> tuple[WalkState, EncodedState]:
        """Advance one edge action and encode the successor state."""
        nxt = self.env.step(state, action, enc.cands)
        h_chosen = T.row(enc.h_cand, action - 1)
        q_next = self.model.update_history(
            self.params, state.query, enc.q_t, enc.h_pool, h_chosen, nxt.node)
        return nxt, self.model.encode_state(
            self.params, nxt.query, self.env.feasible(nxt), q_next)
