"""Scalar distributions used to draw cluster parameters."""

from abc import abstractmethod
from math import prod

import equinox as eqx
import jax
import jax.numpy as jnp
import jax.random as jr
import numpy as np
from jax import dtypes
from jax.scipy import stats as jstats
from jax.scipy.special import i0e
from jaxtyping import Array, ArrayLike, PRNGKeyArray

from tubechannel.bisection_search import BracketedInverse
from tubechannel.utils import arraylike_to_array

_GAUSS_LEGENDRE_NODES, _GAUSS_LEGENDRE_WEIGHTS = np.polynomial.legendre.leggauss(128)

EAM_TOLERANCE = 1e-10


class AbstractDistribution(eqx.Module):
    """Abstract scalar distribution.

    Concrete subclasses define ``_sample``, returning a single draw given a key,
    and ``_log_prob``, returning the log density (or mass) of a single point. The
    public methods vectorize these.
    """

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of a single sample."""
        return ()

    @abstractmethod
    def _log_prob(self, x: Array) -> Array:
        """Evaluate the log probability of a single point."""

    @abstractmethod
    def _sample(self, key: PRNGKeyArray) -> Array:
        """Draw a single sample."""

    def log_prob(self, x: ArrayLike) -> Array:
        """Evaluate the log probability, broadcasting over any shape of ``x``."""
        x = arraylike_to_array(x, err_name="x", dtype=float)
        lps = jnp.vectorize(self._log_prob)(x)
        return jnp.where(jnp.isnan(lps), -jnp.inf, lps)

    def sample(self, key: PRNGKeyArray, sample_shape: tuple[int, ...] = ()) -> Array:
        """Draw samples with shape ``sample_shape``.

        Args:
            key: Jax random key.
            sample_shape: Sample shape. Defaults to ().
        """
        keys = _get_sample_keys(key, sample_shape)
        sample_fn = self._sample
        for _ in sample_shape:
            sample_fn = jax.vmap(sample_fn)
        return sample_fn(keys)


def _get_sample_keys(key: PRNGKeyArray, sample_shape: tuple[int, ...]):
    if not dtypes.issubdtype(key.dtype, dtypes.prng_key):
        raise TypeError("New-style keys are required, e.g. jax.random.key(0).")
    if not sample_shape:
        return key
    return jr.split(key, prod(sample_shape)).reshape(sample_shape)


def _von_mises_upper_mass(y: ArrayLike, concentration: ArrayLike) -> Array:
    """Probability mass of the zero-mean Von Mises distribution on ``[0, y]``.

    Evaluated by Gauss-Legendre quadrature of ``exp(k (cos θ - 1))`` against the
    scaled normaliser ``2π i0e(k)``, which stays finite for large ``k``.
    """
    concentration = jnp.asarray(concentration, float)
    y = jnp.clip(jnp.asarray(y, float), 0.0, jnp.pi)
    half = y[..., None] / 2
    theta = half * (_GAUSS_LEGENDRE_NODES + 1)
    integrand = jnp.exp(concentration[..., None] * (jnp.cos(theta) - 1))
    integral = jnp.sum(half * _GAUSS_LEGENDRE_WEIGHTS * integrand, axis=-1)
    return integral / (2 * jnp.pi * i0e(concentration))


def _von_mises_half_quantile(mass: ArrayLike, concentration: ArrayLike) -> Array:
    """Solve ``upper_mass(y) = mass`` for ``y`` in ``[0, π]``, elementwise."""
    mass = jnp.asarray(mass, float)
    inverter = BracketedInverse(lower=0.0, upper=float(jnp.pi), tol=EAM_TOLERANCE)

    def upper_mass(y):
        return _von_mises_upper_mass(y, concentration)

    y = inverter(upper_mass, mass)
    return jnp.where(jnp.isinf(concentration) | (mass == 0), 0.0, y)


class VonMises(AbstractDistribution):
    """Von Mises distribution on the circle.

    ``concentration`` may be ``jnp.inf``, in which case every draw equals ``loc``.
    Densities and the CDF are defined on ``[loc - π, loc + π]``.

    Args:
        loc: Mean direction in radians.
        concentration: Concentration ``k > 0``.
    """

    loc: Array
    concentration: Array

    def __init__(self, loc: ArrayLike = 0.0, concentration: ArrayLike = 1.0):
        self.loc = jnp.asarray(loc, float)
        self.concentration = jnp.asarray(concentration, float)

    def cdf(self, x: ArrayLike) -> Array:
        """Cumulative distribution function on ``[loc - π, loc + π]``."""
        centred = jnp.asarray(x, float) - self.loc
        mass = _von_mises_upper_mass(jnp.abs(centred), self.concentration)
        return 0.5 + jnp.sign(centred) * mass

    def icdf(self, probability: ArrayLike) -> Array:
        """Inverse CDF, found by bisection to within ``1e-10`` radians."""
        offset = jnp.asarray(probability, float) - 0.5
        half = _von_mises_half_quantile(jnp.abs(offset), self.concentration)
        return self.loc + jnp.sign(offset) * half

    def _log_prob(self, x):
        k = self.concentration
        return k * (jnp.cos(x - self.loc) - 1) - jnp.log(2 * jnp.pi * i0e(k))

    def _sample(self, key):
        return self.icdf(jr.uniform(key))

    def sample(self, key: PRNGKeyArray, sample_shape: tuple[int, ...] = ()) -> Array:
        # One vectorized inverse-CDF solve instead of one per key
        _get_sample_keys(key, ())
        return self.icdf(jr.uniform(key, sample_shape))


class Exponential(AbstractDistribution):
    """Exponential distribution parameterised by its mean."""

    mean: Array

    def __init__(self, mean: ArrayLike = 1.0):
        self.mean = jnp.asarray(mean, float)

    def _log_prob(self, x):
        return jstats.expon.logpdf(x, scale=self.mean)

    def _sample(self, key):
        return jr.exponential(key) * self.mean


class Poisson(AbstractDistribution):
    """Poisson distribution over non-negative integers."""

    rate: Array

    def __init__(self, rate: ArrayLike = 1.0):
        self.rate = jnp.asarray(rate, float)

    def _log_prob(self, x):
        return jstats.poisson.logpmf(x, self.rate)

    def _sample(self, key):
        return jr.poisson(key, self.rate)


def _upper_half_targets(ray_count: int) -> np.ndarray:
    """Masses above the median for the positive equal-area quantiles."""
    index = np.arange(ray_count // 2 + 1 + ray_count % 2, ray_count + 1)
    return (2 * index - 1 - ray_count) / (2 * ray_count)


def _assemble_offsets(upper: np.ndarray, ray_count: int) -> np.ndarray:
    middle = [0.0] if ray_count % 2 else []
    return np.concatenate([-upper[::-1], middle, upper])


def eam_discretize(ray_count: int, concentration: float | int) -> Array:
    """Equal area discretization of a zero-mean Von Mises distribution.

    Returns the offsets at the ``(l - 0.5) / L`` quantiles, ``l = 1, ..., L``.
    Only the quantiles above the median are solved for; the rest are their
    mirror images, so the offsets are sorted and exactly symmetric about zero.

    Args:
        ray_count: Number of rays ``L >= 1``.
        concentration: Von Mises concentration ``k > 0`` (``inf`` allowed).

    Example:
        .. doctest::

            >>> eam_discretize(1, 6.0).tolist()
            [0.0]
    """
    if ray_count < 1:
        raise ValueError("ray_count must be at least 1.")
    if concentration <= 0:
        raise ValueError("concentration must be positive.")
    targets = _upper_half_targets(ray_count)
    upper = np.asarray(_von_mises_half_quantile(targets, concentration))
    return jnp.asarray(_assemble_offsets(upper, ray_count))


def eam_table(concentration: float | int, max_rays: int) -> Array:
    """Equal area offsets for every ray count up to ``max_rays``.

    Row ``L`` holds the ``L`` offsets of :func:`eam_discretize` followed by zero
    padding; row 0 is all zeros. All rows are solved in a single bisection.

    Returns:
        Array with shape ``(max_rays + 1, max_rays)``.
    """
    if max_rays < 1:
        raise ValueError("max_rays must be at least 1.")
    if concentration <= 0:
        raise ValueError("concentration must be positive.")
    targets = [_upper_half_targets(count) for count in range(1, max_rays + 1)]
    flat = np.concatenate(targets)
    solved = np.asarray(_von_mises_half_quantile(flat, concentration))
    table = np.zeros((max_rays + 1, max_rays))
    start = 0
    for count, target in enumerate(targets, start=1):
        upper = solved[start : start + len(target)]
        table[count, :count] = _assemble_offsets(upper, count)
        start += len(target)
    return jnp.asarray(table)
