"""Toy target distributions and the latent prior."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .rng import normal, stream

KINDS = ("swiss_roll", "gaussian", "gaussian_mixture", "checkerboard")

SWISS_ROLL_NOISE = 0.5
SWISS_ROLL_CALIBRATION = dict(n=100_000, seed=20240601)
# Per-axis mean/std of the raw spiral at the default noise, from
# _swiss_roll_moments(SWISS_ROLL_NOISE). Frozen so samples are stable across versions.
SWISS_ROLL_MEAN = (1.9956409718438626, 0.22007021080073627)
SWISS_ROLL_STD = (6.6291505212917015, 6.981872679304799)


@dataclass(frozen=True)
class DatasetSpec:
    """A named toy distribution.

    ``params`` per kind:

    * ``swiss_roll``: ``noise`` (raw-units std, default 0.5)
    * ``gaussian``: ``mean`` (list), ``std`` (scalar)
    * ``gaussian_mixture``: ``means`` (list of lists), ``stds`` (list), ``weights`` (list)
    * ``checkerboard``: ``grid_size`` (default 4), ``half_width`` (default 2.0)
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        p = self.params
        if self.kind == "gaussian":
            if float(p.get("std", 1.0)) < 0:
                raise ValueError("gaussian std must be >= 0")
            if len(p.get("mean", [0.0, 0.0])) not in (1, 2):
                raise ValueError("gaussian dim must be 1 or 2")
        elif self.kind == "gaussian_mixture":
            w = np.asarray(p.get("weights", []), dtype=float)
            means = p.get("means", [])
            if len(w) == 0 or len(w) != len(means) or len(p.get("stds", [])) != len(w):
                raise ValueError("gaussian_mixture needs matching means, stds and weights")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("mixture weights must be positive and sum to 1")
            if any(float(s) < 0 for s in p["stds"]):
                raise ValueError("mixture stds must be >= 0")
        elif self.kind == "swiss_roll":
            if float(p.get("noise", SWISS_ROLL_NOISE)) < 0:
                raise ValueError("swiss_roll noise must be >= 0")

    @property
    def dim(self) -> int:
        if self.kind == "gaussian":
            return len(self.params.get("mean", [0.0, 0.0]))
        if self.kind == "gaussian_mixture":
            return len(self.params["means"][0])
        return 2

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        if "kind" not in d:
            raise ValueError("dataset spec needs a 'kind'")
        kind = d.pop("kind")
        return cls(kind, d)


def _raw_swiss_roll(n, noise, rng):
    u = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    pts = np.stack([u * np.cos(u), u * np.sin(u)], axis=1)
    return pts + noise * normal(rng, (n, 2))


def _swiss_roll_moments(noise):
    rng = stream(SWISS_ROLL_CALIBRATION["seed"], "swiss_roll_calibration")
    raw = _raw_swiss_roll(SWISS_ROLL_CALIBRATION["n"], noise, rng)
    return tuple(raw.mean(axis=0)), tuple(raw.std(axis=0))


@lru_cache(maxsize=None)
def _swiss_roll_normalization(noise):
    if noise == SWISS_ROLL_NOISE:
        return SWISS_ROLL_MEAN, SWISS_ROLL_STD
    return _swiss_roll_moments(noise)


def sample(spec: DatasetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws from ``spec`` as an ``[n, dim]`` array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = spec.params
    if spec.kind == "swiss_roll":
        noise = float(p.get("noise", SWISS_ROLL_NOISE))
        mean, std = _swiss_roll_normalization(noise)
        return (_raw_swiss_roll(n, noise, rng) - np.asarray(mean)) / np.asarray(std)
    if spec.kind == "gaussian":
        mean = np.asarray(p.get("mean", [0.0, 0.0]), dtype=float)
        return mean + float(p.get("std", 1.0)) * normal(rng, (n, mean.size))
    if spec.kind == "gaussian_mixture":
        means = np.asarray(p["means"], dtype=float)
        stds = np.asarray(p["stds"], dtype=float)
        cdf = np.cumsum(np.asarray(p["weights"], dtype=float))
        comp = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), len(cdf) - 1)
        return means[comp] + stds[comp, None] * normal(rng, (n, means.shape[1]))
    if spec.kind == "checkerboard":
        k = int(p.get("grid_size", 4))
        half = float(p.get("half_width", 2.0))
        cells = [(i, j) for i in range(k) for j in range(k) if (i + j) % 2 == 0]
        pick = np.asarray(cells)[rng.integers(0, len(cells), n)]
        width = 2.0 * half / k
        return -half + (pick + rng.random((n, 2))) * width
    raise ValueError(f"unknown dataset kind {spec.kind!r}")


def sample_prior(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Standard normal latents, ``[n, dim]``."""
    if n < 1 or dim < 1:
        raise ValueError("dim and n must be >= 1")
    return normal(rng, (n, dim))
