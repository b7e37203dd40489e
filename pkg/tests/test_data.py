import numpy as np
import pytest

from mgm import data
from mgm.data import DatasetSpec, sample, sample_prior
from mgm.rng import Streams, bernoulli, normal, stream


def test_gaussian_moments():
    x = sample(DatasetSpec("gaussian", {"mean": [0.0], "std": 1.0}), 100_000, stream(0, "data"))
    assert x.shape == (100_000, 1)
    assert abs(x.mean()) < 0.02 and abs(x.std() - 1) < 0.02


def test_same_seed_same_samples():
    spec = DatasetSpec("swiss_roll")
    a = sample(spec, 500, stream(7, "data"))
    b = sample(spec, 500, stream(7, "data"))
    assert a.tobytes() == b.tobytes()
    assert sample(spec, 500, stream(8, "data")).tobytes() != a.tobytes()


MIXTURE = {"means": [[-1.0, 0.0], [1.0, 0.0]], "stds": [0.2, 0.3], "weights": [0.25, 0.75]}


@pytest.mark.parametrize("kind", data.KINDS)
def test_all_kinds_are_2d(kind):
    params = MIXTURE if kind == "gaussian_mixture" else {}
    x = sample(DatasetSpec(kind, params), 200, stream(0, "data"))
    assert x.shape == (200, 2) and np.all(np.isfinite(x))


def test_swiss_roll_normalization_is_frozen():
    mean, std = data._swiss_roll_moments(data.SWISS_ROLL_NOISE)
    np.testing.assert_allclose(mean, data.SWISS_ROLL_MEAN, rtol=0, atol=1e-12)
    np.testing.assert_allclose(std, data.SWISS_ROLL_STD, rtol=0, atol=1e-12)
    x = sample(DatasetSpec("swiss_roll"), 100_000, stream(3, "data"))
    assert np.all(np.abs(x.mean(axis=0)) < 0.02)
    assert np.all(np.abs(x.std(axis=0) - 1) < 0.02)


def test_mixture_weights_validated():
    with pytest.raises(ValueError):
        DatasetSpec("gaussian_mixture", {"means": [[0, 0], [1, 1]], "stds": [1, 1], "weights": [0.7, 0.7]})
    with pytest.raises(ValueError):
        DatasetSpec("gaussian_mixture", {"means": [[0, 0], [1, 1]], "stds": [1, 1], "weights": [1.5, -0.5]})
    with pytest.raises(ValueError):
        DatasetSpec("swiss_roll", {"noise": -1.0})
    with pytest.raises(ValueError):
        DatasetSpec("moons")


def test_spec_round_trip():
    spec = DatasetSpec("gaussian", {"mean": [1.0, 2.0], "std": 0.5})
    assert DatasetSpec.from_dict(spec.to_dict()) == spec
    assert spec.dim == 2


def test_prior():
    z = sample_prior(3, 100_000, stream(0, "prior"))
    assert z.shape == (100_000, 3)
    assert np.all(np.abs(z.mean(axis=0)) < 0.02) and np.all(np.abs(z.std(axis=0) - 1) < 0.02)
    assert sample_prior(3, 10, stream(0, "prior")).tobytes() == sample_prior(3, 10, stream(0, "prior")).tobytes()


def test_named_streams_do_not_alias():
    s = Streams(0)
    a, b = s["data"].random(4), s["eps"].random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(Streams(0)["data"].random(4), a)


def test_box_muller_normals():
    x = normal(stream(0, "n"), (200_000,))
    assert abs(x.mean()) < 0.01 and abs(x.std() - 1) < 0.01
    assert normal(stream(0, "n"), 5).shape == (5,)
    b = bernoulli(stream(0, "b"), 10_000)
    assert set(np.unique(b)) == {0, 1} and abs(b.mean() - 0.5) < 0.03
