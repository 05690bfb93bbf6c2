"""Graph-walking agent that learns from terminal-only rewards.

A recurrent state encoder feeds shared policy/Q heads; PUCT tree search
generates trajectories that off-policy Q-learning consumes, improving the
policy through the shared scores. Ships with a knowledge-graph completion
environment and the Three Glass Puzzle benchmark.
"""

from .config import RunConfig, default_config
from .graph import KgEnvironment, KnowledgeGraph, Query, load_triples
from .inference import EvalConfig, beam_decode, evaluate, score_nodes
from .mcts import SearchConfig, run_search
from .model import (KbcFeaturizer, ModelConfig, PuzzleFeaturizer, WalkEncoder,
                    WalkerModel, kbc_model_config, puzzle_model_config)
from .nn import ParamStore
from .puzzle import PuzzleEnvironment, PuzzleSpec, generate_dataset
from .training import (TrainConfig, Trajectory, positive_reward_rate,
                       q_learning_update, train_mwalk, train_pg, train_qwalk)

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "default_config",
    "KgEnvironment", "KnowledgeGraph", "Query", "load_triples",
    "EvalConfig", "beam_decode", "evaluate", "score_nodes",
    "SearchConfig", "run_search",
    "KbcFeaturizer", "ModelConfig", "PuzzleFeaturizer", "WalkEncoder",
    "WalkerModel", "kbc_model_config", "puzzle_model_config",
    "ParamStore",
    "PuzzleEnvironment", "PuzzleSpec", "generate_dataset",
    "TrainConfig", "Trajectory", "positive_reward_rate",
    "q_learning_update", "train_mwalk", "train_pg", "train_qwalk",
]
