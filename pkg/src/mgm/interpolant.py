"""Symmetric stochastic interpolants and flipped observations.

An interpolant is the pair ``(I_t, sigma_t)``. Only the linear path
``I_t(x0, x1) = (1 - t) x0 + t x1`` with ``sigma_t = sqrt(sigma * t * (1 - t))``
ships. Everything here is deterministic: noise draws, flip bits and times are
supplied by the caller so the same ``eps`` can be reused across both branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("linear",)


@dataclass(frozen=True)
class InterpolantSpec:
    kind: str = "linear"
    sigma_strength: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown interpolant kind {self.kind!r}")
        if not self.sigma_strength >= 0:
            raise ValueError(f"sigma_strength must be >= 0, got {self.sigma_strength}")

    def weights(self, t):
        """Coefficients ``(a, c)`` with ``I_t(x0, x1) = a * x0 + c * x1``."""
        t = np.asarray(t, dtype=float)
        return 1.0 - t, t

    def deterministic(self) -> "InterpolantSpec":
        return InterpolantSpec(self.kind, 0.0)


@dataclass(frozen=True)
class FlippedDraw:
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    b: np.ndarray
    eps: np.ndarray
    x_tilde: np.ndarray
    delta: np.ndarray


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"interpolation time outside [0, 1]: {t}")
    return t


def _per_row(coef, x):
    # scalar coefficients pass through; per-sample ones become column vectors
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 0:
        return coef
    if x.ndim < 1 or coef.shape[0] != x.shape[0]:
        raise ValueError(f"per-sample time array of length {coef.shape[0]} does not match batch {x.shape}")
    return coef.reshape(coef.shape + (1,) * (x.ndim - coef.ndim))


def _check_pair(x0, x1):
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape != x1.shape:
        raise ValueError(f"endpoint shapes differ: {x0.shape} vs {x1.shape}")
    return x0, x1


def interpolate(spec: InterpolantSpec, x0, x1, t):
    """``I_t(x0, x1)``. ``t`` is a scalar or one time per row of a batch."""
    x0, x1 = _check_pair(x0, x1)
    a, c = spec.weights(_check_t(t))
    return _per_row(a, x0) * x0 + _per_row(c, x0) * x1


def noise_scale(spec: InterpolantSpec, t):
    t = _check_t(t)
    return np.sqrt(spec.sigma_strength * t * (1.0 - t))


def sample_interpolant(spec: InterpolantSpec, x0, x1, t, eps):
    """``I_t(x0, x1) + sigma_t * eps``."""
    x0, x1 = _check_pair(x0, x1)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} does not match endpoints {x0.shape}")
    return interpolate(spec, x0, x1, t) + _per_row(noise_scale(spec, t), x0) * eps


def observed_time(t, b):
    """Time of the branch the flip bit selects: ``t`` if ``b == 0`` else ``1 - t``."""
    t = _check_t(t)
    b = np.asarray(b)
    if np.any((b != 0) & (b != 1)):
        raise ValueError("flip bits must be 0 or 1")
    return np.where(b == 1, 1.0 - t, t)


def sample_flipped(spec: InterpolantSpec, x0, x1, t, b, eps) -> FlippedDraw:
    """Flipped observation: the interpolant at ``t`` (``b=0``) or ``1 - t`` (``b=1``), same eps."""
    x0, x1 = _check_pair(x0, x1)
    s = observed_time(t, b)
    x_tilde = sample_interpolant(spec, x0, x1, s, eps)
    return FlippedDraw(x0=x0, x1=x1, t=np.asarray(t, dtype=float), b=np.asarray(b),
                       eps=np.asarray(eps, dtype=float), x_tilde=x_tilde, delta=x1 - x0)


def check_symmetry(spec: InterpolantSpec, grid_size: int = 101, n_pairs: int = 16, seed: int = 0) -> float:
    """Largest violation of ``I_t(a, b) = I_{1-t}(b, a)`` and ``sigma_t = sigma_{1-t}`` on a t-grid."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_pairs, 3))
    b = rng.normal(size=(n_pairs, 3))
    worst = 0.0
    for t in np.linspace(0.0, 1.0, grid_size):
        path = np.abs(interpolate(spec, a, b, t) - interpolate(spec, b, a, 1.0 - t)).max()
        sched = abs(float(noise_scale(spec, t)) - float(noise_scale(spec, 1.0 - t)))
        worst = max(worst, path, sched)
    return float(worst)
