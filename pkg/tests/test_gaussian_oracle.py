import numpy as np
import pytest

from mgm.estimator import kernel_conditional_mean
from mgm.gaussian_oracle import (GaussianEndpoints, denoiser_pair, flipped_divergence_exact, flipped_field,
                                 midpoint_divergence_exact, naive_divergence_exact, velocity_field)
from mgm.interpolant import InterpolantSpec, sample_flipped, sample_interpolant
from mgm.rng import bernoulli, normal

SAME = GaussianEndpoints([0.0, 0.0], [0.0, 0.0])


def _grid(lim=3.0, steps=41):
    axis = np.linspace(-lim, lim, steps)
    return np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)


def test_velocity_vanishes_at_midpoint_for_equal_endpoints():
    assert np.all(velocity_field(SAME, 0.5, _grid()) == 0.0)


def test_velocity_equal_variance_is_constant_shift():
    g = GaussianEndpoints([0.0], [1.7])
    x = np.linspace(-4, 4, 9)[:, None]
    np.testing.assert_allclose(velocity_field(g, 0.5, x), 1.7, atol=1e-14)


def test_velocity_quarter_time_value():
    g = GaussianEndpoints([0.0], [0.0])
    # slope (0.25 - 0.75) / (0.5625 + 0.0625)
    assert velocity_field(g, 0.25, np.array([[1.0]]))[0, 0] == pytest.approx(-0.8, abs=1e-14)


def test_velocity_matches_stated_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m0, m1 = rng.normal(size=(2, 2))
        s0, s1 = rng.uniform(0.3, 2.0, 2)
        t = rng.uniform(0.01, 0.99)
        x = rng.normal(size=(5, 2))
        g = GaussianEndpoints(m0, m1, s0, s1)
        coef = (t * s1 ** 2 - (1 - t) * s0 ** 2) / ((1 - t) ** 2 * s0 ** 2 + t ** 2 * s1 ** 2)
        want = (m1 - m0) + coef * (x - ((1 - t) * m0 + t * m1))
        np.testing.assert_allclose(velocity_field(g, t, x), want, atol=1e-12)


def test_velocity_endpoint_limit():
    g = GaussianEndpoints([0.5], [2.0], 1.0, 0.7)
    x = np.array([[0.3], [-1.0]])
    np.testing.assert_allclose(velocity_field(g, 0.0, x), 2.0 - x, atol=1e-15)


def test_flipped_field_vanishes_for_equal_endpoints():
    for sigma in (0.0, 0.05, 0.5):
        for t in (0.0, 0.1, 0.25, 0.4, 0.5, 0.8):
            assert np.abs(flipped_field(SAME, t, _grid(), sigma)).max() <= 1e-12
    wide = GaussianEndpoints([1.0, -2.0], [1.0, -2.0], 1.5, 1.5)
    assert np.abs(flipped_field(wide, 0.3, _grid(), 0.2)).max() <= 1e-12


def test_flipped_equals_velocity_at_midpoint():
    g = GaussianEndpoints([0.0, 1.0], [2.0, -1.0], 0.8, 1.3)
    x = _grid(steps=11)
    np.testing.assert_allclose(flipped_field(g, 0.5, x), velocity_field(g, 0.5, x), atol=1e-14)


def test_denoiser_pair_properties():
    g = GaussianEndpoints([0.3], [-1.0], 1.2, 0.9)
    x = np.array([[0.5], [2.0]])
    e0, e1 = denoiser_pair(g, 0.0, x)
    np.testing.assert_allclose(e0, x, atol=1e-15)
    np.testing.assert_allclose(e1, -1.0, atol=1e-15)
    sym = GaussianEndpoints([0.3], [0.3], 1.2, 1.2)
    rng = np.random.default_rng(1)
    for _ in range(100):
        t = rng.uniform()
        x = rng.normal(size=(3, 1))
        np.testing.assert_allclose(denoiser_pair(sym, t, x)[0], denoiser_pair(sym, 1 - t, x)[1], atol=1e-12)
        a, b = denoiser_pair(g, t, x)
        np.testing.assert_allclose(b - a, velocity_field(g, t, x), atol=1e-15)


def test_midpoint_divergence_exact():
    assert midpoint_divergence_exact(SAME) == 0.0
    for mu in (0.5, 1.0, 2.0):
        assert midpoint_divergence_exact(GaussianEndpoints([0.0], [mu])) == pytest.approx(mu ** 2, abs=1e-12)
    g = GaussianEndpoints([0.1, 0.4], [1.0, -0.2], 0.7, 1.4)
    assert midpoint_divergence_exact(g.translated([3.0, -5.0])) == pytest.approx(midpoint_divergence_exact(g))
    assert midpoint_divergence_exact(GaussianEndpoints([0.0], [0.0], 1.0, 1.1)) > 1e-4


def test_midpoint_divergence_exact_against_monte_carlo():
    g = GaussianEndpoints([0.0], [0.5], 0.6, 1.3)
    rng = np.random.default_rng(2)
    x0 = 0.6 * rng.standard_normal((400_000, 1))
    x1 = 0.5 + 1.3 * rng.standard_normal((400_000, 1))
    xm = sample_interpolant(InterpolantSpec(), x0, x1, 0.5, np.zeros_like(x0))
    v = velocity_field(g, 0.5, xm)
    mc = np.sum(v * v, axis=1)
    assert abs(mc.mean() - midpoint_divergence_exact(g)) < 4 * mc.std() / np.sqrt(len(mc))


def test_time_integrated_oracles():
    same = GaussianEndpoints([0.0], [0.0])
    assert flipped_divergence_exact(same) == pytest.approx(0.0, abs=1e-20)
    # affine field: the time average follows from the same closed form as the midpoint case
    naive = naive_divergence_exact(same)
    ts = (np.arange(20_000) + 0.5) / 20_000
    coef = (2 * ts - 1) / ((1 - ts) ** 2 + ts ** 2)
    assert naive == pytest.approx(np.mean(coef ** 2 * ((1 - ts) ** 2 + ts ** 2)), rel=1e-6)
    assert flipped_divergence_exact(GaussianEndpoints([0.0], [1.0])) > 0.1


def test_oracle_agrees_with_kernel_regression_on_random_triples():
    rng = np.random.default_rng(3)
    spec = InterpolantSpec()
    n = 200_000
    for _ in range(50):
        g = GaussianEndpoints(rng.uniform(-1, 1, 1), rng.uniform(-1, 1, 1), *rng.uniform(0.5, 1.5, 2))
        t = float(rng.uniform(0.1, 0.9))
        mu = (1 - t) * g.m0[0] + t * g.m1[0]
        sd = np.sqrt((1 - t) ** 2 * g.s0 ** 2 + t ** 2 * g.s1 ** 2)
        x = mu + sd * rng.uniform(-1, 1)
        x0 = g.m0[0] + g.s0 * normal(rng, (n, 1))
        x1 = g.m1[0] + g.s1 * normal(rng, (n, 1))
        xt = sample_interpolant(spec, x0, x1, t, np.zeros_like(x0))
        est, se = kernel_conditional_mean(xt, x1 - x0, np.array([x]), 0.03 * sd, return_stderr=True)
        want = velocity_field(g, t, np.array([[x]]))[0, 0]
        assert abs(est[0] - want) < 3 * se[0], (g, t, x)


def test_flipped_oracle_against_kernel_regression():
    g = GaussianEndpoints([0.0], [2.0])
    rng = np.random.default_rng(4)
    n = 1_000_000
    x0, x1 = normal(rng, (n, 1)), 2.0 + normal(rng, (n, 1))
    d = sample_flipped(InterpolantSpec(), x0, x1, 0.1, bernoulli(rng, n), np.zeros((n, 1)))
    est, se = kernel_conditional_mean(d.x_tilde, d.delta, np.array([1.0]), 0.02, return_stderr=True)
    want = flipped_field(g, 0.1, np.array([[1.0]]))[0, 0]
    assert abs(est[0] - want) < 3 * se[0]


def test_invalid_endpoints_rejected():
    with pytest.raises(ValueError):
        GaussianEndpoints([0.0], [0.0], 0.0, 1.0)
    with pytest.raises(ValueError):
        GaussianEndpoints([0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        velocity_field(SAME, 1.5, np.zeros((1, 2)))
