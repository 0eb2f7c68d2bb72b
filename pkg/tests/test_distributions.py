import jax.numpy as jnp
import jax.random as jr
import numpy as np
import pytest
from jax.scipy.stats import vonmises

from tubechannel.distributions import (
    Exponential,
    Poisson,
    VonMises,
    eam_discretize,
    eam_table,
)

_test_distributions = {
    "VonMises": lambda: VonMises(0.3, 6.0),
    "VonMisesInfinite": lambda: VonMises(0.3, jnp.inf),
    "Exponential": lambda: Exponential(30e-9),
    "Poisson": lambda: Poisson(8.0),
}

_test_distributions = [pytest.param(v, id=k) for k, v in _test_distributions.items()]
_test_shapes = [(), (2,), (2, 3)]


@pytest.mark.parametrize("distribution", _test_distributions)
@pytest.mark.parametrize("shape", _test_shapes)
def test_sample(distribution, shape):
    d = distribution()
    sample = d.sample(jr.key(0), shape)
    assert sample.shape == shape


@pytest.mark.parametrize("distribution", _test_distributions)
@pytest.mark.parametrize("shape", _test_shapes)
def test_log_prob(distribution, shape):
    d = distribution()
    x = d.sample(jr.key(0), shape)
    assert d.log_prob(x).shape == shape


def test_old_style_keys_rejected():
    with pytest.raises(TypeError, match="New-style keys"):
        Exponential().sample(jr.PRNGKey(0), (2,))


def test_von_mises_log_prob():
    d = VonMises(0.5, 4.0)
    x = jnp.linspace(-2.0, 3.0, 11)
    expected = vonmises.logpdf(x - 0.5, 4.0)
    assert d.log_prob(x) == pytest.approx(expected, abs=1e-10)


def test_von_mises_cdf():
    d = VonMises(0.2, 6.0)
    assert d.cdf(0.2) == pytest.approx(0.5, abs=1e-12)
    assert d.cdf(0.2 + jnp.pi) == pytest.approx(1.0, abs=1e-10)
    assert d.cdf(0.2 - jnp.pi) == pytest.approx(0.0, abs=1e-10)

    x = jnp.linspace(-1.0, 1.4, 9)
    assert d.icdf(d.cdf(x)) == pytest.approx(x, abs=1e-9)


def test_von_mises_sample_moments():
    d = VonMises(0.0, 6.0)
    samples = d.sample(jr.key(1), (20000,))
    # E[cos θ] = I1(k) / I0(k) for a zero-mean Von Mises
    expected = 0.91236  # I1(6) / I0(6)
    assert jnp.mean(jnp.cos(samples)) == pytest.approx(expected, abs=0.01)
    assert jnp.mean(samples) == pytest.approx(0, abs=0.01)


def test_von_mises_histogram():
    d = VonMises(0.3, 6.0)
    n = 20_000
    sample = np.asarray(d.sample(jr.key(5), (n,)))
    edges = 0.3 + np.linspace(-1.2, 1.2, 13)
    observed = np.bincount(np.searchsorted(edges, sample), minlength=14)
    cdf = np.concatenate([[0.0], np.asarray(d.cdf(jnp.asarray(edges))), [1.0]])
    expected = n * np.diff(cdf)
    assert expected.min() > 5
    statistic = np.sum((observed - expected) ** 2 / expected)
    # 99.9% quantile of the chi-square distribution with 13 degrees of freedom
    assert statistic < 34.53


def test_von_mises_infinite_concentration():
    d = VonMises(0.7, jnp.inf)
    assert d.sample(jr.key(0), (5,)) == pytest.approx(jnp.full(5, 0.7))


def _simpson_upper_mass(y, concentration, intervals=20000):
    """Independent oracle: mass of the zero-mean Von Mises on [0, y]."""
    theta = np.linspace(0.0, y, intervals + 1)
    weights = np.ones(intervals + 1)
    weights[1:-1:2], weights[2:-1:2] = 4, 2
    density = np.exp(concentration * (np.cos(theta) - 1))
    integral = (y / intervals / 3) * np.sum(weights * density)
    normaliser = 2 * np.pi * np.i0(concentration) * np.exp(-concentration)
    return integral / normaliser


@pytest.mark.parametrize("ray_count", [1, 2, 5, 8, 20])
@pytest.mark.parametrize("concentration", [0.5, 6.0, 30.0])
def test_eam_discretize(ray_count, concentration):
    offsets = np.asarray(eam_discretize(ray_count, concentration))
    assert offsets.shape == (ray_count,)
    assert np.all(np.diff(offsets) > 0)
    assert np.array_equal(offsets, -offsets[::-1])

    # Every offset sits on its equal-area quantile
    density_peak = 1 / (2 * np.pi * np.i0(concentration) * np.exp(-concentration))
    for index, offset in enumerate(offsets, start=1):
        target = (index - 0.5) / ray_count
        mass = 0.5 + np.sign(offset) * _simpson_upper_mass(abs(offset), concentration)
        assert abs(mass - target) < 1e-8 * density_peak


def test_eam_discretize_infinite_concentration():
    assert eam_discretize(4, jnp.inf) == pytest.approx(jnp.zeros(4))


def test_eam_table():
    table = eam_table(6.0, 6)
    assert table.shape == (7, 6)
    assert table[0] == pytest.approx(jnp.zeros(6))
    for count in range(1, 7):
        assert table[count, :count] == pytest.approx(
            eam_discretize(count, 6.0), abs=1e-12
        )
        assert table[count, count:] == pytest.approx(jnp.zeros(6 - count))


@pytest.mark.parametrize(
    ("fn", "args"),
    [
        (eam_discretize, (0, 6.0)),
        (eam_discretize, (3, 0.0)),
        (eam_table, (6.0, 0)),
        (eam_table, (-1.0, 4)),
    ],
)
def test_eam_errors(fn, args):
    with pytest.raises(ValueError):  # noqa: PT011
        fn(*args)
