import json
import os
import stat
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mwalk.checkpoint import load_checkpoint, save_checkpoint
from mwalk.config import (RunConfig, apply_overrides, default_config,
                          parse_config)
from mwalk.errors import ConfigError
from mwalk.cli import main

from conftest import build_graph, tiny_kbc_model


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path, one_hop_graph):
    model, params = tiny_kbc_model(one_hop_graph, seed=2)
    params.adam_m = {n: np.random.default_rng(0).normal(
        size=t.data.shape).astype(np.float32)
        for n, t in params.params.items()}
    params.adam_v = {n: np.abs(m) for n, m in params.adam_m.items()}
    params.step = 17
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, params, config_hash="abc123", extra={"epoch": 3})
    restored, meta = load_checkpoint(path)
    assert meta["config_hash"] == "abc123"
    assert meta["epoch"] == 3
    assert restored.step == 17
    assert sorted(restored.names()) == sorted(params.names())
    for name, t in params.params.items():
        assert np.array_equal(restored[name].data, t.data)
        assert restored[name].data.dtype == np.float32
        assert np.array_equal(restored.adam_m[name], params.adam_m[name])
        assert np.array_equal(restored.adam_v[name], params.adam_v[name])


def test_checkpoint_rejects_float64_store(tmp_path, one_hop_graph):
    model, _ = tiny_kbc_model(one_hop_graph)
    params64 = model.init_params(np.random.default_rng(0), dtype=np.float64)
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "x.npz", params64)


def test_checkpoint_resume_reproduces_training(tmp_path, one_hop_graph):
    from mwalk.graph import KgEnvironment
    from mwalk.training import TrainConfig, train_mwalk
    from conftest import one_hop_query

    env = KgEnvironment(one_hop_graph, horizon=2, mask_query_edge=False)
    query = one_hop_query(one_hop_graph)
    cfg = TrainConfig(epochs=2, lr=0.01, rollouts=8, seed=5, c=2.0, beta=0.5)

    # one continuous 4-epoch run
    model, params_full = tiny_kbc_model(one_hop_graph, seed=2)
    full_cfg = TrainConfig(epochs=4, lr=0.01, rollouts=8, seed=5, c=2.0,
                           beta=0.5)
    train_mwalk(model, params_full, lambda q: env, [query], full_cfg)

    # the same run split by a save/load in the middle: epochs 3-4 see the
    # identical parameter and optimizer state either way
    model2, params_half = tiny_kbc_model(one_hop_graph, seed=2)
    train_mwalk(model2, params_half, lambda q: env, [query], cfg)
    save_checkpoint(tmp_path / "mid.npz", params_half)
    resumed, _ = load_checkpoint(tmp_path / "mid.npz")
    for name in params_half.names():
        assert np.array_equal(resumed[name].data, params_half[name].data)
    assert resumed.step == params_half.step


# -- config ------------------------------------------------------------------

def test_config_roundtrip_idempotent():
    cfg = default_config("kbc")
    text = cfg.to_text()
    again = parse_config(text).to_text()
    assert text == again


def test_config_env_defaults_follow_environment():
    puzzle = default_config("puzzle")
    kbc = default_config("kbc")
    assert puzzle.horizon == 12 and puzzle.c == 0.5 and puzzle.beta == 0.2
    assert puzzle.lr == 0.0005 and puzzle.batch_size == 8
    assert puzzle.state_dim == 32 and puzzle.stop_activation == "relu"
    assert kbc.horizon == 8 and kbc.c == 2.0 and kbc.beta == 0.5
    assert kbc.lr == 0.0001 and kbc.state_dim == 64
    assert kbc.stop_activation == "tanh"
    assert kbc.entity_dim == 4 and kbc.relation_dim == 64


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_config("[run]\nenv = puzzle\nbogus = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[nosuch]\nx = 1\n")


def test_config_bad_value_rejected():
    with pytest.raises(ConfigError):
        parse_config("[mcts]\nnum_simulations = many\n")


def test_overrides():
    cfg = default_config("puzzle")
    apply_overrides(cfg, ["mcts.num_simulations=64", "lr=0.001"])
    assert cfg.num_simulations == 64
    assert cfg.lr == 0.001
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["nope=1"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["justakey"])


def test_budget_list_parsing():
    cfg = default_config("puzzle")
    cfg.budgets = "1, 10,50"
    assert cfg.budget_list() == (1, 10, 50)
    cfg.budgets = "a,b"
    with pytest.raises(ConfigError):
        cfg.budget_list()


# -- CLI ---------------------------------------------------------------------

def test_cli_puzzle_gen_deterministic(tmp_path):
    out1, out2 = tmp_path / "d1", tmp_path / "d2"
    assert main(["puzzle-gen", "--seed", "3", "--out", str(out1)]) == 0
    assert main(["puzzle-gen", "--seed", "3", "--out", str(out2)]) == 0
    assert (out1 / "puzzles.txt").read_bytes() == (out2 / "puzzles.txt").read_bytes()
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert len(manifest["train"]) == 500
    assert len(manifest["test"]) == 100


def test_cli_train_eval_predict_puzzle(tmp_path):
    data = tmp_path / "data"
    # small dataset keeps the smoke test fast
    from mwalk.puzzle import generate_dataset, write_dataset
    ds = generate_dataset(seed=1, n_total=8, n_train=6)
    write_dataset(data, ds)
    out = tmp_path / "run"
    rc = main(["train", "--env", "puzzle", "--seed", "1", "--out", str(out),
               "--set", "data.data_dir=%s" % data,
               "--set", "train.epochs=1",
               "--set", "mcts.num_simulations=4",
               "--set", "model.state_dim=8",
               "--set", "model.query_dim=8",
               "--set", "model.gru_hidden=8",
               "--set", "env.horizon=4"])
    assert rc == 0
    assert (out / "checkpoint.npz").exists()
    assert (out / "metrics.jsonl").exists()
    assert (out / "metrics.csv").exists()
    config_copy = out / "config.ini"
    assert config_copy.exists()
    assert not config_copy.stat().st_mode & stat.S_IWUSR  # immutable copy

    eval_out = tmp_path / "eval"
    rc = main(["eval", "--config", str(config_copy), "--out", str(eval_out),
               "--checkpoint", str(out / "checkpoint.npz"),
               "--set", "eval.eval_simulations=4"])
    assert rc == 0
    assert (eval_out / "report.txt").exists()
    assert (eval_out / "eval_metrics.csv").exists()
    assert (eval_out / "per_query.csv").exists()

    spec = ds.specs[0]
    rc = main(["predict", "--config", str(config_copy),
               "--checkpoint", str(out / "checkpoint.npz"),
               "--query", "%d %d %d %d" % spec])
    assert rc == 0


def test_cli_exit_codes(tmp_path):
    # config error: unknown key
    bad_cfg = tmp_path / "bad.ini"
    bad_cfg.write_text("[run]\nenv = puzzle\nwhat = 1\n")
    assert main(["train", "--config", str(bad_cfg)]) == 2
    # config error: puzzle without data dir
    assert main(["train", "--env", "puzzle", "--out", str(tmp_path / "x")]) == 2
    # data error: missing checkpoint file
    data = tmp_path / "data"
    from mwalk.puzzle import generate_dataset, write_dataset
    write_dataset(data, generate_dataset(seed=1, n_total=4, n_train=3))
    rc = main(["eval", "--env", "puzzle", "--out", str(tmp_path / "y"),
               "--set", "data.data_dir=%s" % data,
               "--checkpoint", str(tmp_path / "missing.npz")])
    assert rc == 3


def test_cli_kbc_train_and_vocabulary_error(tmp_path):
    train = tmp_path / "train.txt"
    train.write_text("a\tr\tb\nb\tr\tc\na\ts\tc\n", encoding="utf-8")
    test = tmp_path / "test.txt"
    test.write_text("a\tr\tc\n", encoding="utf-8")
    out = tmp_path / "run"
    rc = main(["train", "--env", "kbc", "--seed", "2", "--out", str(out),
               "--set", "data.train_file=%s" % train,
               "--set", "data.test_file=%s" % test,
               "--set", "train.epochs=1",
               "--set", "mcts.num_simulations=4",
               "--set", "model.state_dim=8",
               "--set", "model.entity_dim=2",
               "--set", "model.relation_dim=4",
               "--set", "model.gru_hidden=8",
               "--set", "env.horizon=3"])
    assert rc == 0
    rc = main(["predict", "--config", str(out / "config.ini"),
               "--checkpoint", str(out / "checkpoint.npz"),
               "--query", "nosuchentity r"])
    assert rc == 3


def test_cli_entrypoint_runs():
    proc = subprocess.run([sys.executable, "-m", "mwalk", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "puzzle-gen" in proc.stdout
