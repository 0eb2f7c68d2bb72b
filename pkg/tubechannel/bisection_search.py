"""Bracketed bisection for inverting monotone functions on a known interval.

Used for the Von Mises quantiles behind the equal area angle offsets, where the
quantile is always known to lie in ``[0, π]``.
"""

import math
from collections.abc import Callable
from typing import NamedTuple

import equinox as eqx
import jax.numpy as jnp
from jax import lax
from jaxtyping import Array, ArrayLike, Real


class _Bracket(NamedTuple):
    low: Real[Array, "*batch"]
    high: Real[Array, "*batch"]


def iterations_for(width: float | int, tol: float | int) -> int:
    """Number of halvings that shrink an interval of ``width`` to at most ``tol``."""
    if width <= 0:
        raise ValueError("width must be positive.")
    if tol <= 0:
        raise ValueError("tol must be positive.")
    return max(0, math.ceil(math.log2(width / tol)))


def bracketed_bisection(
    func: Callable[[Array], Array],
    target: Real[ArrayLike, "*batch"],
    *,
    lower: float | int,
    upper: float | int,
    iterations: int,
) -> Real[Array, "*batch"]:
    """Solve ``func(x) = target`` elementwise for a non-decreasing ``func``.

    ``func`` must act elementwise. Targets below ``func(lower)`` return ``lower``
    and targets above ``func(upper)`` return ``upper``. The loop always runs
    ``iterations`` halvings, so the returned value is within
    ``(upper - lower) / 2 ** (iterations + 1)`` of the inverse.

    Args:
        func: Elementwise non-decreasing function.
        target: Values to invert.
        lower: Lower end of the bracket.
        upper: Upper end of the bracket.
        iterations: Number of halvings.
    """
    if not lower < upper:
        raise ValueError("lower must be less than upper.")
    if iterations < 0:
        raise ValueError("iterations must be non-negative.")
    target = jnp.asarray(target, float)

    def halve(_, bracket: _Bracket) -> _Bracket:
        mid = (bracket.low + bracket.high) / 2
        below = func(mid) < target
        return _Bracket(
            low=jnp.where(below, mid, bracket.low),
            high=jnp.where(below, bracket.high, mid),
        )

    start = _Bracket(jnp.full_like(target, lower), jnp.full_like(target, upper))
    bracket = lax.fori_loop(0, iterations, halve, start)
    return (bracket.low + bracket.high) / 2


class BracketedInverse(eqx.Module):
    """Inverse of a non-decreasing function known to lie in ``[lower, upper]``.

    Args:
        lower: Lower end of the bracket.
        upper: Upper end of the bracket.
        tol: Maximum distance of the returned value from the true inverse.
    """

    lower: float | int = 0.0
    upper: float | int = math.pi
    tol: float = 1e-10

    def __check_init__(self):
        if not self.lower < self.upper:
            raise ValueError("lower must be less than upper.")
        if self.tol <= 0:
            raise ValueError("tol must be positive.")

    @property
    def iterations(self) -> int:
        return iterations_for(self.upper - self.lower, 2 * self.tol)

    def __call__(self, func: Callable[[Array], Array], target: ArrayLike) -> Array:
        return bracketed_bisection(
            func,
            target,
            lower=self.lower,
            upper=self.upper,
            iterations=self.iterations,
        )
