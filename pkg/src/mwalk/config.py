"""Run configuration: flat key-value file with one section per module,
typed schema, per-environment defaults, and deterministic round-trip
serialization. Unknown sections or keys are hard errors.
"""

from __future__ import annotations

import hashlib
import io
from configparser import ConfigParser
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

__all__ = ["RunConfig", "default_config", "parse_config", "load_config",
           "apply_overrides"]


@dataclass
class RunConfig:
    # [run]
    env: str = "puzzle"              # puzzle | kbc
    seed: int = 0
    out_dir: str = "runs/latest"
    workers: int = 1
    # [data]
    data_dir: str = ""               # puzzle dataset directory
    train_file: str = ""             # kbc triple files
    valid_file: str = ""
    test_file: str = ""
    inverse_marker: str = "_inv"
    # [model]
    state_dim: int = 32
    gru_hidden: int = 64
    stop_hidden: int = 16
    stop_activation: str = "relu"
    entity_dim: int = 4
    relation_dim: int = 64
    query_dim: int = 64
    tau: float = 1.0
    # [env]
    horizon: int = 12
    mask_query_edge: bool = True
    # [mcts]
    num_simulations: int = 32
    c: float = 0.5
    beta: float = 0.2
    gamma: float = 0.99
    # [train]
    trainer: str = "mwalk"
    epochs: int = 30
    lr: float = 0.0005
    batch_size: int = 8
    gen_batch: int = 8
    epsilon: float = 0.1
    baseline_decay: float = 0.99
    eval_interval: int = 0
    checkpoint_interval: int = 0
    # [eval]
    eval_mode: str = "mcts"          # mcts | beam
    eval_simulations: int = 32
    beam_size: int = 128
    filtered: bool = True
    budgets: str = ""                # comma-separated extra budgets

    def budget_list(self) -> tuple[int, ...]:
        if not self.budgets.strip():
            return ()
        try:
            return tuple(int(b) for b in self.budgets.split(",") if b.strip())
        except ValueError:
            raise ConfigError("budgets must be comma-separated integers, got %r"
                              % self.budgets) from None

    def to_text(self) -> str:
        lines = []
        for section, keys in _SCHEMA.items():
            lines.append("[%s]" % section)
            for key in keys:
                value = getattr(self, key)
                if isinstance(value, bool):
                    value = "true" if value else "false"
                lines.append("%s = %s" % (key, value))
            lines.append("")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


_SCHEMA: dict[str, tuple[str, ...]] = {
    "run": ("env", "seed", "out_dir", "workers"),
    "data": ("data_dir", "train_file", "valid_file", "test_file", "inverse_marker"),
    "model": ("state_dim", "gru_hidden", "stop_hidden", "stop_activation",
              "entity_dim", "relation_dim", "query_dim", "tau"),
    "env": ("horizon", "mask_query_edge"),
    "mcts": ("num_simulations", "c", "beta", "gamma"),
    "train": ("trainer", "epochs", "lr", "batch_size", "gen_batch", "epsilon",
              "baseline_decay", "eval_interval", "checkpoint_interval"),
    "eval": ("eval_mode", "eval_simulations", "beam_size", "filtered", "budgets"),
}

_KEY_TO_SECTION = {key: section for section, keys in _SCHEMA.items() for key in keys}

# Per-environment defaults where they differ from the dataclass values
# (which carry the puzzle settings).
_KBC_DEFAULTS = {
    "env": "kbc",
    "state_dim": 64,
    "stop_activation": "tanh",
    "horizon": 8,
    "c": 2.0,
    "beta": 0.5,
    "lr": 0.0001,
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def default_config(env: str) -> RunConfig:
    if env == "puzzle":
        return RunConfig()
    if env == "kbc":
        cfg = RunConfig()
        for key, value in _KBC_DEFAULTS.items():
            setattr(cfg, key, value)
        return cfg
    raise ConfigError("unknown environment %r (expected puzzle or kbc)" % env)


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError("bad value %r for key %r (expected %s)"
                          % (raw, key, kind)) from None


def parse_config(text: str) -> RunConfig:
    """Parse a config file; environment-specific defaults are applied
    first, then explicit keys override them."""
    parser = ConfigParser()
    try:
        parser.read_string(text)
    except Exception as exc:
        raise ConfigError("cannot parse config: %s" % exc) from None
    env = parser.get("run", "env", fallback="puzzle").strip()
    cfg = default_config(env)
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError("unknown config section [%s]" % section)
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError("unknown key %r in section [%s]" % (key, section))
            setattr(cfg, key, _coerce(key, raw))
    cfg.budget_list()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError("config file not found: %s" % path) from None
    return parse_config(text)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` (or ``key=value``) CLI overrides."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override %r is not key=value" % item)
        key, raw = item.split("=", 1)
        key = key.strip()
        if "." in key:
            section, key = key.split(".", 1)
            if section not in _SCHEMA or key not in _SCHEMA[section]:
                raise ConfigError("unknown config key %r" % item)
        elif key not in _KEY_TO_SECTION:
            raise ConfigError("unknown config key %r" % key)
        setattr(cfg, key, _coerce(key, raw))
    return cfg
