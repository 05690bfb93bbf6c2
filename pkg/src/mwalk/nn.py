"""Parameter storage, the layer types used by the walker model, the Adam
optimizer, and a finite-difference gradient checker.

Layers operate on a :class:`ParamStore` slice identified by a dotted name
prefix, so the same code serves every configured network (candidate
encoder, history projection, stop-score head, GRU).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .tensor import Tensor, ShapeError, linear, relu, tanh
from .tensor import _result, _wants_grad

__all__ = [
    "ParamStore",
    "glorot_uniform",
    "add_fcn",
    "add_gru",
    "fcn_forward",
    "gru_cell",
    "adam_step",
    "grad_check",
]

_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor] | None] = {
    "relu": relu,
    "tanh": tanh,
    "linear": None,
}


class ParamStore:
    """Named map from parameter paths to trainable tensors.

    Also owns the Adam moment buffers and the step counter so that a
    checkpoint can restore optimizer state exactly. Updates are
    serialized through :func:`adam_step`; concurrent readers must hold a
    snapshot taken between updates.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError("duplicate parameter %r" % name)
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.params[name]
        except KeyError:
            raise KeyError("unknown parameter %r" % name) from None

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def clone(self) -> "ParamStore":
        out = ParamStore(self.dtype)
        for name, t in self.params.items():
            out.add(name, t.data.copy())
        out.adam_m = {k: v.copy() for k, v in self.adam_m.items()}
        out.adam_v = {k: v.copy() for k, v in self.adam_v.items()}
        out.step = self.step
        return out

    def astype(self, dtype) -> "ParamStore":
        """Copy of the store in another precision (used for gradient checks)."""
        out = ParamStore(dtype)
        for name, t in self.params.items():
            out.add(name, t.data)
        return out


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def add_fcn(store: ParamStore, prefix: str, widths: Sequence[int],
            rng: np.random.Generator) -> None:
    """Register a fully-connected stack ``widths[0] -> ... -> widths[-1]``."""
    for i in range(len(widths) - 1):
        store.add("%s.w%d" % (prefix, i), glorot_uniform(rng, widths[i], widths[i + 1]))
        store.add("%s.b%d" % (prefix, i), np.zeros(widths[i + 1]))


def add_gru(store: ParamStore, prefix: str, input_dim: int, hidden_dim: int,
            rng: np.random.Generator) -> None:
    for gate in ("r", "z", "c"):
        store.add("%s.w%s" % (prefix, gate), glorot_uniform(rng, input_dim, hidden_dim))
        store.add("%s.u%s" % (prefix, gate), glorot_uniform(rng, hidden_dim, hidden_dim))
        store.add("%s.b%s" % (prefix, gate), np.zeros(hidden_dim))


def _apply(name: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[name]
    except KeyError:
        raise ValueError("unknown activation %r" % name) from None
    return x if fn is None else fn(x)


def fcn_forward(store: ParamStore, prefix: str, x: Tensor,
                activation: str | Sequence[str] = "relu") -> Tensor:
    """Run a fully-connected stack registered under ``prefix``.

    ``activation`` is either one name applied after every layer or a
    per-layer sequence. Input may be a vector or a matrix of row vectors.
    Dimension mismatches raise :class:`ShapeError` naming the offending
    parameter path.
    """
    n_layers = 0
    while "%s.w%d" % (prefix, n_layers) in store:
        n_layers += 1
    if n_layers == 0:
        raise KeyError("no layers registered under prefix %r" % prefix)
    if isinstance(activation, str):
        acts = [activation] * n_layers
    else:
        acts = list(activation)
        if len(acts) != n_layers:
            raise ValueError("expected %d activations for %r, got %d"
                             % (n_layers, prefix, len(acts)))
    h = x
    for i in range(n_layers):
        w = store["%s.w%d" % (prefix, i)]
        b = store["%s.b%d" % (prefix, i)]
        if h.shape[-1] != w.shape[0]:
            raise ShapeError("%s.w%d expects input width %d, got %s"
                             % (prefix, i, w.shape[0], h.shape))
        h = _apply(acts[i], linear(h, w, b))
    return h


def gru_cell(store: ParamStore, prefix: str, h_prev: Tensor, x: Tensor) -> Tensor:
    """One GRU step: reset gate r, update gate z, candidate state.

    new_h = (1 - z) * h_prev + z * tanh(x W_c + (r * h_prev) U_c + b_c)

    Implemented as a single fused tape node with a hand-written backward
    pass; this cell sits on the hottest path of both search and training,
    and the composed-op version spends more time in tape bookkeeping than
    in arithmetic.
    """
    wr, ur, br = store["%s.wr" % prefix], store["%s.ur" % prefix], store["%s.br" % prefix]
    wz, uz, bz = store["%s.wz" % prefix], store["%s.uz" % prefix], store["%s.bz" % prefix]
    wc, uc, bc = store["%s.wc" % prefix], store["%s.uc" % prefix], store["%s.bc" % prefix]
    hidden = ur.shape[0]
    if h_prev.shape != (hidden,):
        raise ShapeError("%s: hidden state must have width %d, got %s"
                         % (prefix, hidden, h_prev.shape))
    if x.shape != (wr.shape[0],):
        raise ShapeError("%s: input must have width %d, got %s"
                         % (prefix, wr.shape[0], x.shape))
    hv, xv = h_prev.data, x.data
    r = expit(xv @ wr.data + hv @ ur.data + br.data)
    z = expit(xv @ wz.data + hv @ uz.data + bz.data)
    rh = r * hv
    cand = np.tanh(xv @ wc.data + rh @ uc.data + bc.data)
    out = (1.0 - z) * hv + z * cand

    def backward(g):
        dz_pre = g * (cand - hv) * z * (1.0 - z)
        dc_pre = g * z * (1.0 - cand * cand)
        drh = dc_pre @ uc.data.T
        dr_pre = drh * hv * r * (1.0 - r)
        if wz.requires_grad:
            wz._accumulate(np.outer(xv, dz_pre))
            uz._accumulate(np.outer(hv, dz_pre))
            bz._accumulate(dz_pre)
            wc._accumulate(np.outer(xv, dc_pre))
            uc._accumulate(np.outer(rh, dc_pre))
            bc._accumulate(dc_pre)
            wr._accumulate(np.outer(xv, dr_pre))
            ur._accumulate(np.outer(hv, dr_pre))
            br._accumulate(dr_pre)
        if _wants_grad(x):
            x._accumulate(dz_pre @ wz.data.T + dc_pre @ wc.data.T
                          + dr_pre @ wr.data.T)
        if _wants_grad(h_prev):
            h_prev._accumulate(g * (1.0 - z) + drh * r
                               + dz_pre @ uz.data.T + dr_pre @ ur.data.T)

    return _result(out, (h_prev, x, wr, ur, br, wz, uz, bz, wc, uc, bc),
                   backward)


def adam_step(store: ParamStore, lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> None:
    """Apply one bias-corrected Adam update and clear the gradients."""
    b1, b2 = betas
    store.step += 1
    bc1 = 1.0 - b1 ** store.step
    bc2 = 1.0 - b2 ** store.step
    for name, t in store.params.items():
        g = t.grad
        if g is None:
            g = np.zeros_like(t.data)
        if name not in store.adam_m:
            store.adam_m[name] = np.zeros_like(t.data)
            store.adam_v[name] = np.zeros_like(t.data)
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        t.grad = None


def grad_check(forward: Callable[[ParamStore], Tensor], store: ParamStore,
               eps: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    ``forward`` must be a deterministic scalar-valued function of the
    store. Returns the worst relative error over every scalar parameter,
    where the error denominator is floored at 1e-6 so that roundoff on
    near-zero gradient entries is judged on an absolute scale. Intended
    to run on a float64 store; float32 noise swamps the signal.
    """
    if store.dtype != np.float64:
        raise ValueError("grad_check requires a float64 parameter store")
    out = forward(store)
    if abs(out.item() - forward(store).item()) > 0.0:
        raise RuntimeError("forward pass is not deterministic; gradient check invalid")
    store.zero_grad()
    out = forward(store)
    out.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in store.params.items()}
    worst = 0.0
    for name, t in store.params.items():
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = forward(store).item()
            flat[i] = orig - eps
            f_minus = forward(store).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
    store.zero_grad()
    return worst
