"""Trainers: tree-search trajectory generation with off-policy Q-learning,
plus the two ablation baselines (REINFORCE policy gradient, and plain
Q-learning over epsilon-greedy rollouts).

All trainers share the walk/encode machinery and the trajectory format.
Trajectories are stored as (query, action list) only; states are
re-encoded under the current parameters at update time, since the
history encodings depend on parameters that change between updates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as T
from .graph import STOP
from .mcts import SearchConfig, run_search
from .model import WalkerModel, WalkEncoder
from .nn import ParamStore, adam_step
from .seeding import derive_rng

__all__ = [
    "Trajectory",
    "TrainConfig",
    "positive_reward_rate",
    "td_target",
    "q_learning_update",
    "train_mwalk",
    "train_pg",
    "train_qwalk",
]

log = logging.getLogger("mwalk.training")


@dataclass(frozen=True)
class Trajectory:
    """A completed walk: the actions taken from the query's source node
    (always ending in STOP) and the terminal reward."""
    query: object
    actions: tuple[int, ...]
    reward: float


@dataclass(frozen=True)
class TrainConfig:
    trainer: str = "mwalk"           # mwalk | pg | qwalk
    epochs: int = 30
    lr: float = 5e-4
    batch_size: int = 8              # trajectories per optimizer step
    gen_batch: int = 8               # queries rolled out per parameter snapshot
    gamma: float = 0.99
    rollouts: int = 32               # simulations (mwalk/qwalk) or samples (pg)
    c: float = 0.5
    beta: float = 0.2
    epsilon: float = 0.1             # qwalk exploration rate
    baseline_decay: float = 0.99     # pg return baseline
    passes: int = 1                  # Q-learning sweeps over each path pool
    ground_search: bool = True       # back up true rewards while generating
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0

    def search_config(self) -> SearchConfig:
        return SearchConfig(num_simulations=self.rollouts, c=self.c,
                            beta=self.beta, gamma=self.gamma,
                            ground_terminal_value=self.ground_search)


def positive_reward_rate(trajectories: Sequence[Trajectory]) -> float:
    """Fraction of trajectories that ended with a positive reward."""
    if not trajectories:
        return 0.0
    return sum(1 for t in trajectories if t.reward > 0) / len(trajectories)


def td_target(terminal: bool, reward: float, gamma: float,
              next_q_max: float) -> float:
    """One-step TD target: the raw reward at a terminal transition,
    otherwise the discounted best successor value (intermediate rewards
    are always zero in this MDP)."""
    return reward if terminal else gamma * next_q_max


def _walk_q_values(model: WalkerModel, params: ParamStore, env,
                   traj: Trajectory) -> list[T.Tensor]:
    """Re-encode the trajectory's states and return Q vectors per step."""
    encoder = WalkEncoder(model, params, env)
    state, enc = encoder.root(traj.query)
    qs = []
    for action in traj.actions:
        qs.append(model.score_actions(params, enc).q_values)
        if action == STOP:
            break
        state, enc = encoder.child(state, enc, action)
    return qs


def q_learning_update(model: WalkerModel, params: ParamStore, env_of: Callable,
                      batch: Sequence[Trajectory], lr: float, gamma: float,
                      betas: tuple[float, float] = (0.9, 0.999),
                      eps: float = 1e-8) -> float:
    """One semi-gradient Q-learning step over a batch of trajectories.

    Per step the target is the terminal reward when the chosen action was
    STOP (the successor is terminal), otherwise gamma times the best
    successor Q-value; the target is treated as a constant so the
    gradient flows only through the predicted Q. The squared TD errors
    are averaged over all steps in the batch and minimized with one Adam
    update. Returns the mean absolute TD error.

    Identical trajectories inside the batch (the search emits duplicates
    of concentrated paths on purpose) are computed once and weighted by
    their multiplicity, which yields the same update.
    """
    groups: dict[Trajectory, int] = {}
    for traj in batch:
        groups[traj] = groups.get(traj, 0) + 1
    loss = None
    n_steps = 0
    td_total = 0.0
    for traj, count in groups.items():
        env = env_of(traj.query)
        qs = _walk_q_values(model, params, env, traj)
        for t, action in enumerate(traj.actions):
            predicted = T.pick(qs[t], action)
            target = td_target(action == STOP, traj.reward, gamma,
                               float(np.max(qs[t + 1].data))
                               if action != STOP else 0.0)
            diff = T.sub(predicted, T.Tensor(
                np.asarray(target, dtype=params.dtype)))
            term = T.scale(T.square(diff), 0.5 * count)
            loss = term if loss is None else T.add(loss, term)
            td_total += count * abs(target - float(predicted.data))
            n_steps += count
    if loss is None:
        return 0.0
    T.scale(loss, 1.0 / n_steps).backward()
    adam_step(params, lr, betas, eps)
    return td_total / n_steps


def _chunks(seq: Sequence, size: int) -> Iterable[Sequence]:
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


@dataclass
class EpochMetrics:
    epoch: int
    positive_reward_rate: float
    mean_td_error: float
    extra: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        rec = {"epoch": self.epoch,
               "positive_reward_rate": self.positive_reward_rate,
               "mean_td_error": self.mean_td_error}
        rec.update(self.extra)
        return rec


def _train_q_style(model: WalkerModel, params: ParamStore, env_of: Callable,
                   queries: Sequence, config: TrainConfig,
                   generate: Callable, label: str,
                   eval_fn: Callable | None = None, eval_interval: int = 0,
                   epoch_hook: Callable | None = None) -> list[EpochMetrics]:
    """Shared outer loop: roll out a group of queries under the current
    parameters, then run one pass of Q-learning over the shuffled pool."""
    rng = derive_rng(config.seed, "train.%s" % label)
    history: list[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(queries))
        epoch_trajs: list[Trajectory] = []
        td_errors: list[float] = []
        for group in _chunks(order, config.gen_batch):
            pool: list[Trajectory] = []
            for qi in group:
                pool.extend(generate(queries[int(qi)], rng))
            for _ in range(max(1, config.passes)):
                rng.shuffle(pool)
                for mb in _chunks(pool, config.batch_size):
                    td_errors.append(q_learning_update(
                        model, params, env_of, mb, config.lr, config.gamma,
                        config.adam_betas, config.adam_eps))
            epoch_trajs.extend(pool)
        metrics = EpochMetrics(
            epoch=epoch,
            positive_reward_rate=positive_reward_rate(epoch_trajs),
            mean_td_error=float(np.mean(td_errors)) if td_errors else 0.0)
        if eval_fn is not None and eval_interval and epoch % eval_interval == 0:
            metrics.extra["eval"] = eval_fn(params, epoch)
        history.append(metrics)
        if epoch_hook is not None:
            epoch_hook(epoch, params, metrics)
        log.info("%s epoch %d: reward_rate=%.3f td=%.4f", label, epoch,
                 metrics.positive_reward_rate, metrics.mean_td_error)
    return history


def train_mwalk(model: WalkerModel, params: ParamStore, env_of: Callable,
                queries: Sequence, config: TrainConfig,
                eval_fn: Callable | None = None, eval_interval: int = 0,
                epoch_hook: Callable | None = None) -> list[EpochMetrics]:
    """Alternate tree-search trajectory generation with Q-learning.

    Per query, the search produces ``rollouts`` simulation records under
    the current parameter snapshot; every record (duplicates included)
    becomes a trajectory with its terminal reward, and each is consumed
    once per pass in shuffled mini-batches.
    """
    search_cfg = config.search_config()

    def generate(query, rng) -> list[Trajectory]:
        env = env_of(query)
        encoder = WalkEncoder(model, params, env)
        _, records = run_search(encoder, query, search_cfg)
        return [Trajectory(query=query, actions=tuple(rec.actions),
                           reward=env.reward(rec.final_state))
                for rec in records]

    return _train_q_style(model, params, env_of, queries, config, generate,
                          "mwalk", eval_fn, eval_interval, epoch_hook)


def train_qwalk(model: WalkerModel, params: ParamStore, env_of: Callable,
                queries: Sequence, config: TrainConfig,
                eval_fn: Callable | None = None, eval_interval: int = 0,
                epoch_hook: Callable | None = None) -> list[EpochMetrics]:
    """Q-learning over epsilon-greedy rollouts (no tree search)."""

    def generate(query, rng) -> list[Trajectory]:
        env = env_of(query)
        encoder = WalkEncoder(model, params, env)
        out = []
        with T.no_grad():
            for _ in range(config.rollouts):
                state, enc = encoder.root(query)
                actions = []
                while True:
                    k = len(enc.cands)
                    if rng.random() < config.epsilon:
                        action = int(rng.integers(k))
                    else:
                        q = model.score_actions(params, enc).q_values.data
                        action = int(np.argmax(q))
                    actions.append(action)
                    if action == STOP:
                        state = env.step(state, STOP, enc.cands)
                        break
                    state, enc = encoder.child(state, enc, action)
                out.append(Trajectory(query=query, actions=tuple(actions),
                                      reward=env.reward(state)))
        return out

    return _train_q_style(model, params, env_of, queries, config, generate,
                          "qwalk", eval_fn, eval_interval, epoch_hook)


def train_pg(model: WalkerModel, params: ParamStore, env_of: Callable,
             queries: Sequence, config: TrainConfig,
             eval_fn: Callable | None = None, eval_interval: int = 0,
             epoch_hook: Callable | None = None) -> list[EpochMetrics]:
    """REINFORCE baseline: sample rollouts from the policy and ascend
    sum_t log pi(a_t) * (R - baseline), with an exponential moving
    average of returns as the baseline. No tree search is involved.
    """
    rng = derive_rng(config.seed, "train.pg")
    baseline = 0.0
    history: list[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(queries))
        epoch_trajs: list[Trajectory] = []
        deltas: list[float] = []
        for qi in order:
            query = queries[int(qi)]
            env = env_of(query)
            encoder = WalkEncoder(model, params, env)
            loss = None
            returns = []
            for _ in range(config.rollouts):
                state, enc = encoder.root(query)
                logp_terms = []
                actions = []
                while True:
                    scores = model.score_actions(params, enc)
                    probs = scores.policy.data.astype(np.float64)
                    probs /= probs.sum()
                    action = int(rng.choice(len(probs), p=probs))
                    logp_terms.append(T.pick(
                        T.log_softmax_tau(scores.u, model.config.tau), action))
                    actions.append(action)
                    if action == STOP:
                        state = env.step(state, STOP, enc.cands)
                        break
                    state, enc = encoder.child(state, enc, action)
                reward = env.reward(state)
                returns.append(reward)
                epoch_trajs.append(Trajectory(query=query, actions=tuple(actions),
                                              reward=reward))
                advantage = reward - baseline
                if advantage != 0.0:
                    logp = logp_terms[0]
                    for term in logp_terms[1:]:
                        logp = T.add(logp, term)
                    term = T.scale(logp, -advantage)
                    loss = term if loss is None else T.add(loss, term)
            mean_return = float(np.mean(returns))
            deltas.append(abs(mean_return - baseline))
            baseline = (config.baseline_decay * baseline
                        + (1.0 - config.baseline_decay) * mean_return)
            if loss is not None:
                T.scale(loss, 1.0 / config.rollouts).backward()
                adam_step(params, config.lr, config.adam_betas, config.adam_eps)
            else:
                params.zero_grad()
        metrics = EpochMetrics(
            epoch=epoch,
            positive_reward_rate=positive_reward_rate(epoch_trajs),
            mean_td_error=float(np.mean(deltas)) if deltas else 0.0)
        if eval_fn is not None and eval_interval and epoch % eval_interval == 0:
            metrics.extra["eval"] = eval_fn(params, epoch)
        history.append(metrics)
        if epoch_hook is not None:
            epoch_hook(epoch, params, metrics)
        log.info("pg epoch %d: reward_rate=%.3f", epoch,
                 metrics.positive_reward_rate)
    return history
