"""Reproducible random streams, one per realization.

The stream of realization ``i`` under master seed ``s`` is
``jax.random.fold_in(jax.random.key(s), i)``, using JAX's default threefry
counter-based generator. Inside a realization, the stream is split once into a
cold-start key and a step key; step ``k`` (``k >= 1``) draws from
``fold_in(step_key, k)``. Any implementation built on threefry2x32 with the same
folding reproduces the draws exactly.
"""

import jax.random as jr
from jaxtyping import PRNGKeyArray


def rng_streams(master_seed: int, realization_index: int) -> PRNGKeyArray:
    """Key of the independent stream of one realization.

    Example:
        .. doctest::

            >>> import jax.random as jr
            >>> a = jr.uniform(rng_streams(7, 0))
            >>> b = jr.uniform(rng_streams(7, 0))
            >>> bool(a == b)
            True
    """
    if master_seed < 0:
        raise ValueError("The master seed must be non-negative.")
    if realization_index < 0:
        raise ValueError("The realization index must be non-negative.")
    return jr.fold_in(jr.key(master_seed), realization_index)


GAIN_STREAM = 2**32 - 1


def gain_stream(master_seed: int, step: int) -> PRNGKeyArray:
    """Key of the large-scale shadowing draw at simulation step ``step``.

    Shadowing has its own stream, at the reserved realization index
    ``GAIN_STREAM``, so enabling it leaves every cluster draw unchanged.
    """
    if step < 0:
        raise ValueError("The step must be non-negative.")
    return jr.fold_in(rng_streams(master_seed, GAIN_STREAM), step)
