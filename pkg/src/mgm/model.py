"""MLP generator and time-conditioned critic, with Adam and EMA.

Two evaluation paths share one set of parameters: plain numpy forwards for
sampling and evaluation, and tape-recorded forwards for training. Both apply
the same operations in the same order, so their outputs agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape, _sigmoid
from .rng import stream

ACTIVATIONS = ("silu", "tanh")
TIME_FEATURES = 3


def time_embedding(t, n: int | None = None) -> np.ndarray:
    """Rows ``[t, sin(2 pi t), cos(2 pi t)]`` for a scalar or per-sample ``t``."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        t = np.full(1 if n is None else n, float(t))
    return np.stack([t, np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)], axis=1)


@dataclass(frozen=True)
class MlpParams:
    layers: tuple  # ((W [in, out], b [out]), ...)
    activation: str = "silu"
    time_conditioned: bool = False

    @property
    def dims(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    @property
    def in_dim(self) -> int:
        """Data dimension accepted by the network (time features excluded)."""
        return self.dims[0] - (TIME_FEATURES if self.time_conditioned else 0)

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer]

    def with_arrays(self, arrays) -> "MlpParams":
        it = iter(arrays)
        return replace(self, layers=tuple((next(it), next(it)) for _ in self.layers))

    def paths(self) -> list[str]:
        return [f"layers[{i}].{k}" for i in range(len(self.layers)) for k in ("w", "b")]


def init_mlp(in_dim: int, hidden, out_dim: int, activation: str = "silu",
             time_conditioned: bool = False, seed: int = 0) -> MlpParams:
    """Uniform ``+-1/sqrt(fan_in)`` weights, zero biases; deterministic in ``seed``."""
    if in_dim < 1 or out_dim < 1 or any(h < 1 for h in hidden):
        raise ValueError("layer dimensions must be >= 1")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = stream(seed, "init")
    dims = [in_dim + (TIME_FEATURES if time_conditioned else 0), *hidden, out_dim]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append((rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out)))
    return MlpParams(tuple(layers), activation, time_conditioned)


def _act_np(name, x):
    return x * _sigmoid(x) if name == "silu" else np.tanh(x)


def _check_input(params, x, t):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"input shape {x.shape} does not match network in_dim {params.in_dim}")
    if params.time_conditioned and t is None:
        raise ValueError("critic needs a time")
    if not params.time_conditioned and t is not None:
        raise ValueError("generator is not time conditioned")
    return x


def mlp_forward(params: MlpParams, x, t=None) -> np.ndarray:
    x = _check_input(params, x, t)
    if params.time_conditioned:
        x = np.concatenate([x, time_embedding(t, len(x))], axis=-1)
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if i < last:
            h = _act_np(params.activation, h)
    return h


def generator_forward(g: MlpParams, z) -> np.ndarray:
    """``x0 = G(z)`` for a batch ``z`` of shape ``[n, in_dim]``."""
    if g.time_conditioned:
        raise ValueError("generator must not be time conditioned")
    return mlp_forward(g, z)


def critic_forward(c: MlpParams, x, t) -> np.ndarray:
    """``f(x, t)``; ``t`` is a scalar or one time per row, in ``[0, 1]``."""
    if not c.time_conditioned:
        raise ValueError("critic must be time conditioned")
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > 1):
        raise ValueError("critic time outside [0, 1]")
    return mlp_forward(c, x, t)


# ---- tape path -------------------------------------------------------------

@dataclass(frozen=True)
class Bound:
    """Parameters recorded on a tape: one ``(w_id, b_id)`` pair per layer."""

    params: MlpParams
    ids: tuple

    def flat_ids(self) -> list[int]:
        return [i for pair in self.ids for i in pair]


def bind(tape: Tape, params: MlpParams, trainable: bool = True) -> Bound:
    ids = tuple((tape.leaf(w, trainable), tape.leaf(b, trainable)) for w, b in params.layers)
    return Bound(params, ids)


def mlp_node(tape: Tape, net: Bound, x: int, t=None) -> int:
    p = net.params
    n = tape.value(x).shape[0]
    if p.time_conditioned:
        if t is None:
            raise ValueError("critic needs a time")
        x = tape.concat(x, tape.const(time_embedding(t, n)))
    h = x
    last = len(net.ids) - 1
    for i, (w, b) in enumerate(net.ids):
        h = tape.add(tape.matmul(h, w), b)
        if i < last:
            h = tape.silu(h) if p.activation == "silu" else tape.tanh(h)
    return h


# ---- optimisation ----------------------------------------------------------

@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.999
    eps_adam: float = 1e-8
    ema_decay: float = 0.999


@dataclass(frozen=True)
class OptState:
    step: int
    m: tuple
    v: tuple
    ema: tuple
    hyper: AdamHyper = field(default_factory=AdamHyper)


def init_opt(params: MlpParams, hyper: AdamHyper | None = None) -> OptState:
    arrays = params.arrays()
    return OptState(0, tuple(np.zeros_like(a) for a in arrays), tuple(np.zeros_like(a) for a in arrays),
                    tuple(a.copy() for a in arrays), hyper or AdamHyper())


def adam_step(params: MlpParams, grads, state: OptState) -> tuple[MlpParams, OptState]:
    """One bias-corrected Adam update; ``grads`` is a list aligned with ``params.arrays()``."""
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise ValueError("gradient list does not match parameters")
    for path, a, g in zip(params.paths(), arrays, grads):
        if g.shape != a.shape:
            raise ValueError(f"{path}: gradient shape {g.shape} != parameter shape {a.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"{path}: non-finite gradient")
    h = state.hyper
    step = state.step + 1
    c1 = 1.0 - h.beta1 ** step
    c2 = 1.0 - h.beta2 ** step
    new_p, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = h.beta1 * m + (1.0 - h.beta1) * g
        v = h.beta2 * v + (1.0 - h.beta2) * (g * g)
        new_p.append(a - h.lr * (m / c1) / (np.sqrt(v / c2) + h.eps_adam))
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_p), replace(state, step=step, m=tuple(new_m), v=tuple(new_v))


def ema_update(state: OptState, params: MlpParams) -> OptState:
    d = state.hyper.ema_decay
    ema = tuple(d * e + (1.0 - d) * a for e, a in zip(state.ema, params.arrays()))
    return replace(state, ema=ema)


def ema_params(params: MlpParams, state: OptState) -> MlpParams:
    return params.with_arrays([e.copy() for e in state.ema])
