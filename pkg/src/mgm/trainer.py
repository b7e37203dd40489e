"""Alternating critic / generator training for one-step generators.

Each step performs ``critic_updates_per_generator`` critic regressions of the
field onto the displacement ``x1 - x0``, then one generator step on the
variational objective ``2 <f, x1 - x0> - ||f||^2``, always on fresh batches,
followed by an EMA update of the generator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from functools import cached_property

import numpy as np

from .autodiff import Tape
from .data import DatasetSpec, sample, sample_prior
from .interpolant import InterpolantSpec, noise_scale, observed_time, sample_flipped
from .model import (AdamHyper, MlpParams, OptState, adam_step, bind, ema_update, generator_forward,
                    init_mlp, init_opt, mlp_node, TIME_FEATURES)
from .rng import Streams, bernoulli, normal

log = logging.getLogger(__name__)

VARIANTS = ("full", "midpoint_only", "naive_unflipped")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the failing key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class TrainingHalted(RuntimeError):
    def __init__(self, step: int, l_psi: float, l_theta: float):
        super().__init__(f"non-finite loss at step {step}: L_psi={l_psi}, L_theta={l_theta}")
        self.step, self.l_psi, self.l_theta = step, l_psi, l_theta


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "full"
    sigma_generator: float = 0.0
    sigma_critic: float = 0.01
    batch: int = 256
    steps: int = 20_000
    critic_updates_per_generator: int = 1
    seed: int = 0
    warmup_steps: int = 0
    warmup_t_max: float = 1.0
    warmup_mu: float = -1.2
    warmup_sd: float = 1.2
    dataset: dict = field(default_factory=lambda: {"kind": "swiss_roll"})
    hidden: list = field(default_factory=lambda: [128, 128, 128])
    critic_hidden: list | None = None
    activation: str = "silu"
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.999
    eps_adam: float = 1e-8
    ema_decay: float = 0.999
    eval_every: int = 0
    n_eval_samples: int = 2000
    field_times: list = field(default_factory=lambda: [0.1, 0.25, 0.5])
    field_grid: dict = field(default_factory=lambda: {"min": -3.0, "max": 3.0, "steps": 41})

    def __post_init__(self):
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"config.{key}", msg)

        need(self.variant in VARIANTS, "variant", f"expected one of {VARIANTS}, got {self.variant!r}")
        for key in ("sigma_generator", "sigma_critic", "warmup_t_max", "warmup_sd", "lr"):
            need(isinstance(getattr(self, key), (int, float)) and getattr(self, key) >= 0, key,
                 "expected a nonnegative number")
        need(self.warmup_t_max > 0, "warmup_t_max", "must be positive")
        need(self.warmup_sd > 0, "warmup_sd", "must be positive")
        for key, low in (("batch", 2), ("steps", 1), ("critic_updates_per_generator", 1),
                         ("warmup_steps", 0), ("eval_every", 0), ("n_eval_samples", 1)):
            v = getattr(self, key)
            need(isinstance(v, int) and not isinstance(v, bool) and v >= low, key, f"expected an integer >= {low}")
        need(isinstance(self.seed, int) and not isinstance(self.seed, bool) and self.seed >= 0, "seed",
             "expected a nonnegative integer")
        for key in ("hidden", "critic_hidden"):
            v = getattr(self, key)
            if v is None and key == "critic_hidden":
                continue
            need(isinstance(v, list) and all(isinstance(h, int) and h >= 1 for h in v), key,
                 "expected a list of positive integers")
        need(self.activation in ("silu", "tanh"), "activation", "expected 'silu' or 'tanh'")
        need(0.0 <= self.beta1 < 1.0, "beta1", "expected a value in [0, 1)")
        need(0.0 <= self.beta2 < 1.0, "beta2", "expected a value in [0, 1)")
        need(0.0 <= self.ema_decay <= 1.0, "ema_decay", "expected a value in [0, 1]")
        need(isinstance(self.field_times, list) and all(0 <= t <= 1 for t in self.field_times),
             "field_times", "expected a list of times in [0, 1]")
        grid = self.field_grid
        need(isinstance(grid, dict) and set(grid) == {"min", "max", "steps"}, "field_grid",
             "expected keys min, max, steps")
        need(isinstance(grid["steps"], int) and grid["steps"] >= 2, "field_grid.steps", "expected an integer >= 2")
        need(grid["max"] > grid["min"], "field_grid.max", "must exceed field_grid.min")
        try:
            self.data_spec
        except ValueError as exc:
            raise ConfigError("config.dataset", str(exc)) from None

    @cached_property
    def data_spec(self) -> DatasetSpec:
        if not isinstance(self.dataset, dict):
            raise ValueError("expected an object")
        return DatasetSpec.from_dict(self.dataset)

    @property
    def hyper(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.eps_adam, self.ema_decay)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        if not isinstance(d, dict):
            raise ConfigError("config", "expected a JSON object")
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"config.{key}", "unknown key")
        d = dict(d)
        for key in ("sigma_generator", "sigma_critic", "warmup_t_max", "warmup_mu", "warmup_sd", "lr",
                    "beta1", "beta2", "eps_adam", "ema_decay"):
            if key in d and isinstance(d[key], int) and not isinstance(d[key], bool):
                d[key] = float(d[key])
        return cls(**d)


@dataclass
class TrainState:
    generator: MlpParams
    gen_opt: OptState
    critic: MlpParams
    critic_opt: OptState
    streams: Streams
    step: int = 0
    history: list = field(default_factory=list)  # (step, L_psi, L_theta)
    last_draws: dict = field(default_factory=dict)


# ---- losses ----------------------------------------------------------------

def critic_loss(tape: Tape, critic, draw) -> int:
    """Mean squared residual ``||f(x~_t, t) - (x1 - x0)||^2`` over the batch.

    ``critic`` is a bound (trainable) network; the batch enters as constants,
    so no gradient reaches whatever produced ``x0``.
    """
    n = len(draw.x_tilde)
    if n == 0:
        raise ValueError("empty batch")
    x = tape.const(draw.x_tilde)
    target = tape.const(draw.delta)
    pred = mlp_node(tape, critic, x, draw.t)
    return tape.scale(tape.sq_norm(tape.sub(pred, target)), 1.0 / n)


def interpolant_node(tape: Tape, spec: InterpolantSpec, x0: int, x1, t, b, eps) -> int:
    """Flipped observation recorded on the tape; differentiable in ``x0``."""
    x1 = np.asarray(x1, dtype=float)
    s = observed_time(t, b)
    a, c = spec.weights(s)
    a = np.broadcast_to(np.asarray(a)[:, None], x1.shape)
    rest = np.asarray(c)[:, None] * x1 + np.asarray(noise_scale(spec, s))[:, None] * np.asarray(eps)
    return tape.add(tape.mul(tape.const(a), x0), tape.const(rest))


def generator_loss(tape: Tape, critic, generator, z, x1, t, b, eps, spec: InterpolantSpec) -> int:
    """Mean of ``2 <f(x~_t, t), x1 - x0> - ||f(x~_t, t)||^2`` with ``x0 = G(z)``.

    Gradients flow to the generator through both ``x~_t`` and the
    displacement. Pass ``critic`` bound with ``trainable=False`` to freeze it.
    """
    n = len(z)
    if n == 0:
        raise ValueError("empty batch")
    x0 = mlp_node(tape, generator, tape.const(z))
    x_tilde = interpolant_node(tape, spec, x0, x1, t, b, eps)
    delta = tape.sub(tape.const(x1), x0)
    f = mlp_node(tape, critic, x_tilde, t)
    inner = tape.sub(tape.scale(tape.dot(f, delta), 2.0), tape.sq_norm(f))
    return tape.scale(inner, 1.0 / n)


# ---- sampling of training batches -----------------------------------------

def sample_times(variant: str, n: int, streams: Streams):
    """``(t, b)`` for one batch under ``variant``."""
    if variant == "full":
        t = 0.5 * streams["t"].random(n)
        b = bernoulli(streams["b"], n)
    elif variant == "midpoint_only":
        t = np.full(n, 0.5)
        b = np.zeros(n, dtype=np.int64)
    elif variant == "naive_unflipped":
        t = streams["t"].random(n)
        b = np.zeros(n, dtype=np.int64)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return t, b


def _batch(state: TrainState, config: TrainConfig, data: DatasetSpec):
    n = config.batch
    z = sample_prior(state.generator.in_dim, n, state.streams["prior"])
    x1 = sample(data, n, state.streams["data"])
    t, b = sample_times(config.variant, n, state.streams)
    eps = normal(state.streams["eps"], x1.shape)
    return z, x1, t, b, eps


def init_state(config: TrainConfig, generator: MlpParams | None = None) -> TrainState:
    dim = config.data_spec.dim
    if generator is None:
        generator = init_mlp(dim, config.hidden, dim, config.activation, False, seed=config.seed)
    critic_hidden = config.critic_hidden if config.critic_hidden is not None else config.hidden
    critic = init_mlp(dim, critic_hidden, dim, config.activation, True, seed=config.seed + 1)
    return TrainState(generator, init_opt(generator, config.hyper), critic, init_opt(critic, config.hyper),
                      Streams(config.seed))


def critic_update(state: TrainState, config: TrainConfig, data: DatasetSpec) -> float:
    z, x1, t, b, eps = _batch(state, config, data)
    x0 = generator_forward(state.generator, z)
    spec = InterpolantSpec(sigma_strength=config.sigma_critic)
    draw = sample_flipped(spec, x0, x1, t, b, eps)
    tape = Tape()
    net = bind(tape, state.critic)
    loss = critic_loss(tape, net, draw)
    grads = tape.backward(loss)
    state.critic, state.critic_opt = adam_step(state.critic, [grads[i] for i in net.flat_ids()],
                                               state.critic_opt)
    state.last_draws["critic"] = (t, b)
    return float(tape.value(loss))


def generator_update(state: TrainState, config: TrainConfig, data: DatasetSpec) -> float:
    z, x1, t, b, eps = _batch(state, config, data)
    spec = InterpolantSpec(sigma_strength=config.sigma_generator)
    tape = Tape()
    gen = bind(tape, state.generator)
    critic = bind(tape, state.critic, trainable=False)
    loss = generator_loss(tape, critic, gen, z, x1, t, b, eps, spec)
    grads = tape.backward(loss)
    state.generator, state.gen_opt = adam_step(state.generator, [grads[i] for i in gen.flat_ids()],
                                               state.gen_opt)
    state.gen_opt = ema_update(state.gen_opt, state.generator)
    state.last_draws["generator"] = (t, b)
    return float(tape.value(loss))


def train_step(state: TrainState, config: TrainConfig, data: DatasetSpec | None = None) -> TrainState:
    data = data or config.data_spec
    step = state.step + 1
    try:
        l_psi = float(np.mean([critic_update(state, config, data)
                               for _ in range(config.critic_updates_per_generator)]))
        l_theta = generator_update(state, config, data)
    except FloatingPointError:
        raise TrainingHalted(step, float("nan"), float("nan")) from None
    if not (np.isfinite(l_psi) and np.isfinite(l_theta)):
        raise TrainingHalted(step, l_psi, l_theta)
    state.step = step
    state.history.append((step, l_psi, l_theta))
    return state


# ---- warmup ----------------------------------------------------------------

def folded_lognormal_time(mu: float, sd: float, tau_max: float, rng: np.random.Generator, size=None):
    """Log-normal noise level reflected about ``log(tau_max)``; always in ``(0, tau_max]``."""
    if not tau_max > 0:
        raise ValueError("tau_max must be positive")
    n = mu + sd * normal(rng, 1 if size is None else size)
    out = fold_log_noise(n, tau_max)
    return float(out[0]) if size is None else out


def fold_log_noise(n, tau_max: float):
    cap = np.log(tau_max)
    s = np.where(n <= cap, n, 2.0 * cap - n)
    return np.exp(s)


def denoising_loss(tape: Tape, denoiser, x, tau, eps) -> int:
    """Mean ``||P(x + tau * eps, tau) - x||^2``."""
    noisy = tape.const(x + np.asarray(tau)[:, None] * eps)
    pred = mlp_node(tape, denoiser, noisy, tau)
    return tape.scale(tape.sq_norm(tape.sub(pred, tape.const(x))), 1.0 / len(x))


def train_denoiser(config: TrainConfig, steps: int, streams: Streams, denoiser: MlpParams | None = None):
    """Train a time-conditioned denoiser; returns ``(params, losses, taus)``."""
    data = config.data_spec
    dim = data.dim
    if denoiser is None:
        denoiser = init_mlp(dim, config.hidden, dim, config.activation, True, seed=config.seed)
    opt = init_opt(denoiser, config.hyper)
    losses, taus = [], []
    for _ in range(steps):
        x = sample(data, config.batch, streams["warmup_data"])
        tau = folded_lognormal_time(config.warmup_mu, config.warmup_sd, config.warmup_t_max,
                                    streams["warmup_tau"], config.batch)
        eps = normal(streams["warmup_eps"], x.shape)
        tape = Tape()
        net = bind(tape, denoiser)
        loss = denoising_loss(tape, net, x, tau, eps)
        val = float(tape.value(loss))
        if not np.isfinite(val):
            raise TrainingHalted(len(losses) + 1, val, float("nan"))
        grads = tape.backward(loss)
        denoiser, opt = adam_step(denoiser, [grads[i] for i in net.flat_ids()], opt)
        losses.append(val)
        taus.append(tau)
    return denoiser, losses, (np.concatenate(taus) if taus else np.empty(0))


def fix_time(denoiser: MlpParams, tau: float) -> MlpParams:
    """Generator ``z -> P(z, tau)``: the constant time features fold into the first bias."""
    (w, b), *rest = denoiser.layers
    d = w.shape[0] - TIME_FEATURES
    emb = np.array([tau, np.sin(2 * np.pi * tau), np.cos(2 * np.pi * tau)])
    first = (w[:d].copy(), b + emb @ w[d:])
    return MlpParams((first, *rest), denoiser.activation, False)


def warmup(config: TrainConfig, streams: Streams, generator: MlpParams | None = None) -> MlpParams:
    """Denoising warmup; the generator becomes the denoiser evaluated at ``tau = warmup_t_max``."""
    if config.warmup_steps == 0:
        if generator is None:
            raise ValueError("warmup disabled and no generator given")
        return generator
    denoiser, losses, _ = train_denoiser(config, config.warmup_steps, streams)
    log.info("warmup: %d steps, final loss %.4f", len(losses), losses[-1])
    return fix_time(denoiser, config.warmup_t_max)


def train(config: TrainConfig, on_step=None) -> TrainState:
    """Warmup (if configured) then ``config.steps`` training steps."""
    state = init_state(config)
    if config.warmup_steps:
        # warmup draws from its own named streams, so training streams are unaffected
        state = init_state(config, warmup(config, state.streams))
    for _ in range(config.steps):
        train_step(state, config)
        if on_step is not None:
            on_step(state)
    return state


__all__ = [
    "TrainConfig", "TrainState", "ConfigError", "TrainingHalted", "critic_loss", "generator_loss",
    "train_step", "warmup", "folded_lognormal_time", "train", "init_state", "sample_times",
    "train_denoiser", "fix_time", "denoising_loss",
]
