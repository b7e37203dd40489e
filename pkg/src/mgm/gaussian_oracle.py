"""Closed-form conditional means for isotropic Gaussian endpoints.

With ``X0 ~ N(m0, s0^2 I)``, ``X1 ~ N(m1, s1^2 I)`` and ``eps ~ N(0, I)``
independent, one branch of the observation is ``Y = a X0 + c X1 + sig eps``.
``(Y, X0, X1)`` is jointly Gaussian with isotropic blocks, so

    E[X0 | Y = y] = m0 + a s0^2 / V (y - mu)
    E[X1 | Y = y] = m1 + c s1^2 / V (y - mu)
    mu = a m0 + c m1,    V = a^2 s0^2 + c^2 s1^2 + sig^2.

The flipped observation is a two-component mixture of such branches (flip bit
unobserved), so its conditional mean weighs each branch by its posterior
probability ``P(B = b | Y = y)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .interpolant import InterpolantSpec


@dataclass(frozen=True)
class GaussianEndpoints:
    m0: tuple
    m1: tuple
    s0: float = 1.0
    s1: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "m0", tuple(float(v) for v in np.atleast_1d(self.m0)))
        object.__setattr__(self, "m1", tuple(float(v) for v in np.atleast_1d(self.m1)))
        if len(self.m0) != len(self.m1) or len(self.m0) == 0:
            raise ValueError("mean vectors must be nonempty and of equal length")
        if not (self.s0 > 0 and self.s1 > 0):
            raise ValueError("standard deviations must be positive")

    @property
    def dim(self) -> int:
        return len(self.m0)

    def translated(self, shift) -> "GaussianEndpoints":
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
        return GaussianEndpoints(np.add(self.m0, shift), np.add(self.m1, shift), self.s0, self.s1)


def _branch(g, a, c, sig2):
    m0, m1 = np.asarray(g.m0), np.asarray(g.m1)
    mu = a * m0 + c * m1
    var = a * a * g.s0 ** 2 + c * c * g.s1 ** 2 + sig2
    if not var > 0:
        raise ZeroDivisionError("degenerate branch variance")
    return mu, var


def _points(g, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.dim:
        raise ValueError(f"query dimension {x.shape[-1]} does not match endpoints dim {g.dim}")
    return x


def _check_t(t):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return float(t)


def denoiser_pair(g: GaussianEndpoints, t: float, x, sigma_strength: float = 0.0):
    """``(E[X0 | X_t = x], E[X1 | X_t = x])`` for the unflipped interpolant."""
    t = _check_t(t)
    x = _points(g, x)
    sig2 = sigma_strength * t * (1.0 - t)
    a, c = 1.0 - t, t
    mu, var = _branch(g, a, c, sig2)
    r = x - mu
    e0 = np.asarray(g.m0) + (a * g.s0 ** 2 / var) * r
    e1 = np.asarray(g.m1) + (c * g.s1 ** 2 / var) * r
    return e0, e1


def velocity_field(g: GaussianEndpoints, t: float, x, sigma_strength: float = 0.0):
    """``E[X1 - X0 | X_t = x]``; at ``t`` in {0, 1} this is the analytic limit (e.g. ``m1 - x`` at 0)."""
    e0, e1 = denoiser_pair(g, t, x, sigma_strength)
    return e1 - e0


def _flip_posterior(g, t, x, sigma_strength):
    # log-odds of B=1 against B=0 at x, isotropic branch densities
    sig2 = sigma_strength * t * (1.0 - t)
    mu0, v0 = _branch(g, 1.0 - t, t, sig2)
    mu1, v1 = _branch(g, t, 1.0 - t, sig2)
    d = g.dim
    q0 = np.sum((x - mu0) ** 2, axis=-1) / v0
    q1 = np.sum((x - mu1) ** 2, axis=-1) / v1
    log_odds = 0.5 * (q0 - q1) + 0.5 * d * (np.log(v0) - np.log(v1))
    return expit(log_odds)


def flipped_denoiser_pair(g: GaussianEndpoints, t: float, x, sigma_strength: float = 0.0):
    """``(E[X0 | X~_t = x], E[X1 | X~_t = x])`` under the random time flip."""
    t = _check_t(t)
    x = _points(g, x)
    w1 = _flip_posterior(g, t, x, sigma_strength)[..., None]
    e0_a, e1_a = denoiser_pair(g, t, x, sigma_strength)
    # branch b=1 observes the path at 1 - t with the same noise schedule
    e0_b, e1_b = denoiser_pair(g, 1.0 - t, x, sigma_strength)
    return (1 - w1) * e0_a + w1 * e0_b, (1 - w1) * e1_a + w1 * e1_b


def flipped_field(g: GaussianEndpoints, t: float, x, sigma_strength: float = 0.0):
    """Symmetrized displacement ``E[X1 - X0 | X~_t = x]`` with the flip bit unobserved."""
    e0, e1 = flipped_denoiser_pair(g, t, x, sigma_strength)
    return e1 - e0


def midpoint_divergence_exact(g: GaussianEndpoints, sigma_strength: float = 0.0) -> float:
    """``E ||v_{1/2}(X_{1/2})||^2``: the field is affine, ``X_{1/2}`` is Gaussian."""
    mu, var = _branch(g, 0.5, 0.5, 0.25 * sigma_strength)
    slope = 0.5 * (g.s1 ** 2 - g.s0 ** 2) / var
    shift = np.asarray(g.m1) - np.asarray(g.m0)
    return float(shift @ shift + slope ** 2 * g.dim * var)


def flipped_divergence_exact(g: GaussianEndpoints, spec: InterpolantSpec | None = None,
                             n_time: int = 64, n_space: int = 80) -> float:
    """Time average over ``t ~ U[0, 1/2]`` of ``E ||v~_t(X~_t)||^2``, by quadrature (1-D only).

    Gauss-Legendre in ``t``; for each branch of the mixture, Gauss-Hermite in ``x``.
    Returns the average, i.e. twice the integral over ``[0, 1/2]``.
    """
    if g.dim != 1:
        raise ValueError("quadrature oracle supports dim == 1 only")
    sigma = 0.0 if spec is None else spec.sigma_strength
    tn, tw = np.polynomial.legendre.leggauss(n_time)
    ts = 0.25 * (tn + 1.0)
    tw = tw / 2.0
    hn, hw = np.polynomial.hermite_e.hermegauss(n_space)
    hw = hw / np.sqrt(2.0 * np.pi)
    total = 0.0
    for t, wt in zip(ts, tw):
        sig2 = sigma * t * (1.0 - t)
        acc = 0.0
        for a, c in ((1.0 - t, t), (t, 1.0 - t)):
            mu, var = _branch(g, a, c, sig2)
            xs = (mu[0] + np.sqrt(var) * hn)[:, None]
            m = flipped_field(g, t, xs, sigma)
            acc += 0.5 * np.sum(hw * np.sum(m * m, axis=-1))
        total += wt * acc
    return float(total)


def naive_divergence_exact(g: GaussianEndpoints, spec: InterpolantSpec | None = None,
                           n_time: int = 64) -> float:
    """Time average over ``t ~ U[0, 1]`` of ``E ||v_t(X_t)||^2``; the field is affine per ``t``."""
    sigma = 0.0 if spec is None else spec.sigma_strength
    tn, tw = np.polynomial.legendre.leggauss(n_time)
    ts = 0.5 * (tn + 1.0)
    tw = tw / 2.0
    shift = np.asarray(g.m1) - np.asarray(g.m0)
    total = 0.0
    for t, wt in zip(ts, tw):
        mu, var = _branch(g, 1.0 - t, t, sigma * t * (1.0 - t))
        slope = (t * g.s1 ** 2 - (1.0 - t) * g.s0 ** 2) / var
        total += wt * (shift @ shift + slope ** 2 * g.dim * var)
    return float(total)
