"""Checkpoint archive: parameter tensors plus optimizer state and a header.

Format is a zip of little-endian float32 ``.npy`` entries keyed by
parameter path (numpy ``savez``), one reserved ``__meta__`` entry holding
a JSON header (config hash, Adam step counter), and ``m:``/``v:``
prefixed entries for the Adam moments. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import ParamStore

__all__ = ["save_checkpoint", "load_checkpoint"]

_META_KEY = "__meta__"


def save_checkpoint(path: str | Path, store: ParamStore, config_hash: str = "",
                    extra: dict | None = None) -> None:
    if store.dtype != np.float32:
        raise ValueError("checkpoints are float32; got store dtype %s" % store.dtype)
    arrays: dict[str, np.ndarray] = {}
    for name, t in store.params.items():
        arrays["p:" + name] = np.ascontiguousarray(t.data, dtype="<f4")
    for name, m in store.adam_m.items():
        arrays["m:" + name] = np.ascontiguousarray(m, dtype="<f4")
    for name, v in store.adam_v.items():
        arrays["v:" + name] = np.ascontiguousarray(v, dtype="<f4")
    meta = {"config_hash": config_hash, "step": store.step}
    if extra:
        meta.update(extra)
    arrays[_META_KEY] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    """Restore a :class:`ParamStore` (with optimizer state) and its header."""
    store = ParamStore(np.float32)
    with np.load(Path(path)) as archive:
        meta = json.loads(bytes(archive[_META_KEY]).decode("utf-8"))
        for key in archive.files:
            if key == _META_KEY:
                continue
            kind, name = key.split(":", 1)
            arr = archive[key]
            if arr.dtype != np.float32:
                raise ValueError("checkpoint entry %r is %s, expected float32"
                                 % (key, arr.dtype))
            if kind == "p":
                store.add(name, arr)
            elif kind == "m":
                store.adam_m[name] = arr.astype(np.float32)
            elif kind == "v":
                store.adam_v[name] = arr.astype(np.float32)
    store.step = int(meta.get("step", 0))
    return store, meta
