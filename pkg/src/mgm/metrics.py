"""Two-sample metrics and field-grid exports."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .rng import normal


@dataclass(frozen=True)
class MetricReport:
    energy_distance: float
    sliced_wasserstein: float
    n_a: int
    n_b: int
    seed: int

    def to_dict(self):
        return asdict(self)


def _as_samples(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("expected a nonempty [n, d] sample array")
    return x


def _mean_dist(a, b, chunk=2048):
    # fixed-order chunked reduction keeps the result deterministic
    total = 0.0
    for i in range(0, len(a), chunk):
        total += float(cdist(a[i:i + chunk], b).sum())
    return total / (len(a) * len(b))


def energy_distance(a, b) -> float:
    """V-statistic ``2 E|a - b| - E|a - a'| - E|b - b'|`` (self-pairs included)."""
    a, b = _as_samples(a), _as_samples(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    # nonnegative in exact arithmetic; clip rounding noise
    return max(0.0, 2.0 * _mean_dist(a, b) - _mean_dist(a, a) - _mean_dist(b, b))


def wasserstein_1d(u, v) -> float:
    """W1 between two empirical 1-D distributions via their quantile functions."""
    u, v = np.sort(np.asarray(u, dtype=float)), np.sort(np.asarray(v, dtype=float))
    if len(u) == len(v):
        return float(np.mean(np.abs(u - v)))
    # unequal sizes: integrate |F_u^-1 - F_v^-1| over the merged quantile grid
    qs = np.union1d(np.arange(1, len(u) + 1) / len(u), np.arange(1, len(v) + 1) / len(v))
    widths = np.diff(np.concatenate([[0.0], qs]))
    mids = qs - widths / 2
    iu = np.minimum((mids * len(u)).astype(int), len(u) - 1)
    iv = np.minimum((mids * len(v)).astype(int), len(v) - 1)
    return float(np.sum(widths * np.abs(u[iu] - v[iv])))


def sliced_wasserstein(a, b, n_projections: int = 128, rng: np.random.Generator | None = None) -> float:
    """Mean 1-D W1 over random unit directions."""
    if n_projections < 1:
        raise ValueError("n_projections must be >= 1")
    a, b = _as_samples(a), _as_samples(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    rng = rng if rng is not None else np.random.default_rng(0)
    dirs = normal(rng, (n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return float(np.mean([wasserstein_1d(a @ d, b @ d) for d in dirs]))


def metric_report(a, b, seed: int = 0, n_projections: int = 128) -> MetricReport:
    a, b = _as_samples(a), _as_samples(b)
    return MetricReport(energy_distance(a, b),
                        sliced_wasserstein(a, b, n_projections, np.random.default_rng(seed)),
                        len(a), len(b), seed)


def grid_points(lo: float, hi: float, steps: int, dim: int) -> np.ndarray:
    """Row-major grid over ``[lo, hi]^dim`` with ``steps`` nodes per axis (last axis fastest)."""
    if steps < 2:
        raise ValueError("grid needs at least 2 steps per axis")
    axis = np.linspace(lo, hi, steps)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class FieldGrid:
    t: float
    x: np.ndarray       # [n, d]
    v: np.ndarray       # [n, d]
    finite: np.ndarray  # [n] bool

    @property
    def max_norm(self) -> float:
        ok = self.finite
        return float(np.linalg.norm(self.v[ok], axis=1).max()) if ok.any() else float("nan")

    def rows(self):
        for x, v, ok in zip(self.x, self.v, self.finite):
            yield list(x), list(v), bool(ok)


def field_grid(field, t: float, lo: float, hi: float, steps: int, dim: int = 2) -> FieldGrid:
    """Evaluate ``field(x, t)`` on a grid; non-finite rows are flagged rather than raised."""
    x = grid_points(lo, hi, steps, dim)
    v = np.asarray(field(x, t), dtype=float).reshape(len(x), -1)
    return FieldGrid(float(t), x, v, np.all(np.isfinite(v), axis=1))
