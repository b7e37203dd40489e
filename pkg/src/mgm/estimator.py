"""Monte-Carlo estimators of the midpoint divergences and their variational form.

The divergences are all of the form ``avg_t E || E[X1 - X0 | obs_t] ||^2``
where ``obs_t`` is the (possibly flipped, possibly noisy) interpolant and the
average runs over ``t`` drawn uniformly on the kind's time range. Note these
are time *averages*: for the ``[0, 1/2]`` kinds the integral is half the value.

The inner conditional mean is estimated by Nadaraya-Watson regression. The
squared norm uses a three-fold cross-fit: regressors fit on folds A and B are
multiplied at the points of fold C, ``<m_A(x), m_B(x)>``, and the folds are
rotated. Because A and B are independent, the estimator has no variance
bias (its mean is the squared norm of the kernel-smoothed field), which keeps
it centered at zero when the endpoints coincide. Standard errors come from
independent replicates.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .interpolant import InterpolantSpec, sample_flipped
from .rng import bernoulli, normal

log = logging.getLogger(__name__)

KINDS = ("midpoint", "naive_timeint", "flipped_timeint", "generalized")
# minimum points per fold for a stable bandwidth
MIN_FOLD = 50
# Fraction of the Silverman bandwidth used by default. The cross-fit has no
# variance bias, so undersmoothing trades a little variance for less smoothing bias.
BANDWIDTH_FACTOR = 0.25


@dataclass(frozen=True)
class SampleSource:
    draw: Callable[[int, np.random.Generator], np.ndarray]
    dim: int
    label: str = ""

    def __call__(self, n, rng):
        x = np.asarray(self.draw(n, rng), dtype=float)
        if x.shape != (n, self.dim):
            raise ValueError(f"source {self.label!r} returned shape {x.shape}, expected {(n, self.dim)}")
        return x


def dataset_source(spec) -> SampleSource:
    from .data import sample

    return SampleSource(lambda n, rng: sample(spec, n, rng), spec.dim, spec.kind)


def gaussian_source(mean, std=1.0) -> SampleSource:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return SampleSource(lambda n, rng: mean + std * normal(rng, (n, mean.size)), mean.size,
                        f"N({mean.tolist()}, {std}^2)")


def shifted(source: SampleSource, shift) -> SampleSource:
    shift = np.asarray(shift, dtype=float)
    return SampleSource(lambda n, rng: source(n, rng) + shift, source.dim, f"{source.label}+{shift.tolist()}")


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    stderr: float
    n_pairs: int
    n_times: int
    estimator: str
    n_replicates: int = 1

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class VariationalEstimate:
    value: float
    stderr: float
    n: int

    def __float__(self):
        return self.value


# --------------------------------------------------------------------------
# kernel regression

def _as_2d(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def kernel_conditional_mean(obs, targets, query, bandwidth: float, return_stderr: bool = False):
    """Gaussian-kernel Nadaraya-Watson estimate of ``E[target | obs = query]``.

    ``obs`` is ``[n, d]``, ``targets`` is ``[n, k]``, ``query`` is ``[d]`` or
    ``[m, d]``. With ``return_stderr`` the sandwich standard error
    ``sqrt(sum w^2 (y - yhat)^2) / sum w`` is returned as well.
    """
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    obs = _as_2d(obs)
    targets = _as_2d(targets)
    if len(obs) == 0 or len(obs) != len(targets):
        raise ValueError("need a nonempty set of (obs, target) pairs of equal length")
    query = np.asarray(query, dtype=float)
    single = query.ndim == 1
    q = np.atleast_2d(query)
    if q.shape[1] != obs.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} does not match obs dim {obs.shape[1]}")
    means = np.empty((len(q), targets.shape[1]))
    errs = np.empty_like(means)
    for i, x in enumerate(q):
        w = np.exp(-0.5 * np.sum((obs - x) ** 2, axis=1) / bandwidth ** 2)
        total = w.sum()
        if total == 0.0:
            raise ValueError(f"query {x.tolist()} outside data support (all kernel weights underflow)")
        means[i] = w @ targets / total
        errs[i] = np.sqrt((w ** 2) @ (targets - means[i]) ** 2) / total
    out = (means[0], errs[0]) if single else (means, errs)
    return out if return_stderr else out[0]


def silverman_bandwidth(obs, factor: float = BANDWIDTH_FACTOR) -> float:
    """``factor`` times Silverman's rule, using the mean per-axis spread of ``obs``."""
    obs = _as_2d(obs)
    n, d = obs.shape
    spread = float(np.mean(obs.std(axis=0)))
    if spread == 0.0:
        spread = 1.0
    return factor * (4.0 / (d + 2)) ** (1.0 / (d + 4)) * spread * n ** (-1.0 / (d + 4))


class BinnedKernelRegression:
    """Nadaraya-Watson on a grid: linear binning, Gaussian filtering, linear interpolation.

    Supports ``d <= 2``. The grid spacing is a fixed fraction of the bandwidth
    and the grid is padded by four bandwidths past the data range.
    """

    MAX_NODES = {1: 1 << 15, 2: 600}
    STEPS_PER_H = {1: 6, 2: 3}

    def __init__(self, bandwidth: float, lo, hi):
        self.h = float(bandwidth)
        lo = np.asarray(lo, dtype=float) - 4 * self.h
        hi = np.asarray(hi, dtype=float) + 4 * self.h
        d = lo.size
        if d not in self.MAX_NODES:
            raise ValueError("binned regression supports dim 1 or 2")
        dx = np.full(d, self.h / self.STEPS_PER_H[d])
        nodes = np.ceil((hi - lo) / dx).astype(int) + 2
        cap = self.MAX_NODES[d]
        if np.any(nodes > cap):
            dx = np.maximum(dx, (hi - lo) / (cap - 2))
            nodes = np.ceil((hi - lo) / dx).astype(int) + 2
        self.lo, self.dx, self.shape = lo, dx, tuple(nodes)

    def _bin(self, x, weights):
        # linear binning of weights [n, k] onto the grid -> [k, *shape]
        u = (x - self.lo) / self.dx
        i = np.floor(u).astype(int)
        f = u - i
        k = weights.shape[1]
        size = int(np.prod(self.shape))
        out = np.zeros((k, size))
        d = x.shape[1]
        for corner in np.ndindex(*(2,) * d):
            corner = np.asarray(corner)
            idx = np.ravel_multi_index(tuple((i + corner).T), self.shape)
            frac = np.prod(np.where(corner == 1, f, 1.0 - f), axis=1)
            for j in range(k):
                out[j] += np.bincount(idx, weights=frac * weights[:, j], minlength=size)
        return out.reshape((k,) + self.shape)

    def fit(self, obs, targets):
        obs, targets = _as_2d(obs), _as_2d(targets)
        stacked = self._bin(obs, np.hstack([np.ones((len(obs), 1)), targets]))
        sig = self.h / self.dx
        self.grids = np.stack([ndimage.gaussian_filter(g, sig, mode="constant", truncate=4.0) for g in stacked])
        return self

    def predict(self, x):
        """Conditional-mean estimates ``[m, k]`` and a mask of points with positive kernel mass."""
        x = _as_2d(x)
        coords = ((x - self.lo) / self.dx).T
        vals = np.stack([ndimage.map_coordinates(g, coords, order=1, mode="constant") for g in self.grids])
        den = vals[0]
        ok = den > 1e-12 * self.grids[0].max()
        out = np.zeros((len(x), len(self.grids) - 1))
        out[ok] = (vals[1:, ok] / den[ok]).T
        return out, ok


def _fold_regressor(obs, targets, bandwidth, lo, hi):
    if obs.shape[1] <= 2:
        return BinnedKernelRegression(bandwidth, lo, hi).fit(obs, targets)

    class _Exact:
        def predict(self, x):
            return kernel_conditional_mean(obs, targets, x, bandwidth), np.ones(len(x), bool)

    return _Exact()


def cross_fit_sq_norm(obs, targets, bandwidth: float | None = None) -> float:
    """Cross-fit estimate of ``E || E[target | obs] ||^2`` from one batch of pairs."""
    obs, targets = _as_2d(obs), _as_2d(targets)
    n = len(obs)
    if n < 3 * MIN_FOLD:
        raise ValueError(f"need at least {3 * MIN_FOLD} pairs for the three-fold split, got {n}")
    folds = np.array_split(np.arange(n), 3)
    lo, hi = obs.min(axis=0), obs.max(axis=0)
    h = bandwidth if bandwidth is not None else silverman_bandwidth(obs[folds[0]])
    models = [_fold_regressor(obs[f], targets[f], h, lo, hi) for f in folds]
    total, count, dropped = 0.0, 0, 0
    for c in range(3):
        a, b = [k for k in range(3) if k != c]
        x = obs[folds[c]]
        ma, oka = models[a].predict(x)
        mb, okb = models[b].predict(x)
        total += float(np.sum(ma * mb))
        count += len(x)
        dropped += int(np.sum(~(oka & okb)))
    if dropped:
        log.debug("cross-fit: %d evaluation points outside fit support", dropped)
    return total / count


# --------------------------------------------------------------------------
# divergences

def _time_plan(kind, n_times):
    """(times sampler, flip?) for each divergence kind; times are stratified uniform draws."""
    if kind == "midpoint":
        return (lambda rng: np.array([0.5])), False
    lo, hi, flip = {"naive_timeint": (0.0, 1.0, False),
                    "flipped_timeint": (0.0, 0.5, True),
                    "generalized": (0.0, 0.5, True)}[kind]

    def times(rng):
        return lo + (hi - lo) * (np.arange(n_times) + rng.random(n_times)) / n_times

    return times, flip


def _draw(p0, p1, spec, t, n, flip, rng):
    x0 = p0(n, rng)
    x1 = p1(n, rng)
    eps = normal(rng, x0.shape)
    b = bernoulli(rng, n) if flip else np.zeros(n, dtype=np.int64)
    return sample_flipped(spec, x0, x1, np.full(n, t), b, eps)


def estimate_divergence(kind: str, p0: SampleSource, p1: SampleSource, spec: InterpolantSpec | None,
                        n_pairs: int, n_times: int = 16, bandwidth: float | None = None,
                        rng: np.random.Generator | None = None, n_replicates: int = 8) -> DivergenceEstimate:
    """Plug-in estimate of one of the four divergences between ``p0`` and ``p1``.

    ``midpoint`` uses ``t = 1/2`` (``n_times`` ignored); ``naive_timeint`` draws
    ``t`` in ``[0, 1]`` without flips; ``flipped_timeint`` and ``generalized``
    draw ``t`` in ``[0, 1/2]`` with fair flips. Only ``generalized`` uses the
    noise schedule of ``spec``; the other three are defined on the deterministic
    linear path. ``n_pairs`` pairs are drawn per time per replicate.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown divergence kind {kind!r}; expected one of {KINDS}")
    if p0.dim != p1.dim:
        raise ValueError(f"source dims differ: {p0.dim} vs {p1.dim}")
    if n_pairs < 3 * MIN_FOLD:
        raise ValueError(f"n_pairs must be >= {3 * MIN_FOLD} for the three-fold split")
    if n_replicates < 2:
        raise ValueError("need at least two replicates for a standard error")
    spec = spec or InterpolantSpec()
    if kind != "generalized":
        spec = spec.deterministic()
    if kind == "midpoint":
        n_times = 1
    elif n_times < 1:
        raise ValueError("n_times must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    times, flip = _time_plan(kind, n_times)
    values = []
    for child in rng.spawn(n_replicates):
        per_t = []
        for t in times(child):
            draw = _draw(p0, p1, spec, t, n_pairs, flip, child)
            per_t.append(cross_fit_sq_norm(draw.x_tilde, draw.delta, bandwidth))
        values.append(float(np.mean(per_t)))
    values = np.asarray(values)
    return DivergenceEstimate(
        value=float(values.mean()),
        stderr=float(values.std(ddof=1) / np.sqrt(len(values))),
        n_pairs=n_pairs, n_times=n_times, estimator=kind, n_replicates=n_replicates,
    )


def variational_value(critic, p0: SampleSource, p1: SampleSource, spec: InterpolantSpec | None,
                      n_pairs: int, n_times: int = 16, rng: np.random.Generator | None = None,
                      kind: str = "generalized") -> VariationalEstimate:
    """Monte-Carlo value of ``avg_t E[2 <f(X~_t, t), X1 - X0> - ||f(X~_t, t)||^2]``.

    ``critic(x, t)`` maps an ``[n, d]`` batch and a scalar time to ``[n, d]``;
    it receives the sampled ``t``, never the flipped ``1 - t``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown divergence kind {kind!r}")
    spec = spec or InterpolantSpec()
    if kind != "generalized":
        spec = spec.deterministic()
    rng = rng if rng is not None else np.random.default_rng(0)
    times, flip = _time_plan(kind, n_times)
    chunks = []
    for t in times(rng):
        draw = _draw(p0, p1, spec, t, n_pairs, flip, rng)
        f = np.asarray(critic(draw.x_tilde, float(t)), dtype=float)
        if f.shape != draw.x_tilde.shape:
            raise ValueError(f"critic returned shape {f.shape}, expected {draw.x_tilde.shape}")
        bad = ~np.all(np.isfinite(f), axis=1)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(f"critic output non-finite at x={draw.x_tilde[i].tolist()}, t={t}")
        chunks.append(np.sum(f * (2.0 * draw.delta - f), axis=1))
    vals = np.concatenate(chunks)
    return VariationalEstimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size)), int(vals.size))


__all__ = [
    "SampleSource", "DivergenceEstimate", "VariationalEstimate", "kernel_conditional_mean",
    "silverman_bandwidth", "BinnedKernelRegression", "cross_fit_sq_norm", "estimate_divergence",
    "variational_value", "dataset_source", "gaussian_source", "shifted",
]
