"""Input conversion and ensemble helpers shared across modules."""

import math
from collections.abc import Sequence

import jax.numpy as jnp
import numpy as np
from jaxtyping import Array, ArrayLike


class EmptyEnsembleError(ValueError):
    """Raised when an estimator is given no realizations or samples."""


def check_shapes_match(shapes: Sequence[tuple[int, ...]]):
    """Raise ``ValueError`` naming the first shape that differs from ``shapes[0]``."""
    reference = tuple(shapes[0]) if shapes else ()
    mismatched = [(i, s) for i, s in enumerate(shapes) if tuple(s) != reference]
    if mismatched:
        index, shape = mismatched[0]
        raise ValueError(
            f"Expected shapes to match; entry {index} has shape {shape} but "
            f"entry 0 has shape {reference}.",
        )


def arraylike_to_array(
    arr: ArrayLike | None,
    err_name: str = "input",
    *,
    trailing: int | None = None,
    **kwargs,
) -> Array:
    """Convert an arraylike input to a JAX array, rejecting anything else.

    Python lists and tuples are not arraylike, so positions must be passed as
    arrays, e.g. ``jnp.array([600.0, 0, 3])`` rather than ``(600, 0, 3)``.

    Args:
        arr: Input to convert.
        err_name: Name used for the input in error messages.
        trailing: If given, the required size of the last axis.
        **kwargs: Passed on to ``jnp.asarray``, e.g. ``dtype``.
    """
    if not isinstance(arr, ArrayLike):
        raise TypeError(f"{err_name} must be arraylike, not {type(arr).__name__}.")
    out = jnp.asarray(arr, **kwargs)
    if trailing is not None and (out.ndim == 0 or out.shape[-1] != trailing):
        raise ValueError(
            f"Expected {err_name} to have a trailing axis of size {trailing}; "
            f"got shape {out.shape}.",
        )
    return out


def compensated_mean(values: ArrayLike) -> np.ndarray:
    """Mean over the leading (realization) axis using exactly rounded sums.

    ``math.fsum`` is used per element, so the result does not depend on the
    order in which realizations were produced or batched. Complex inputs are
    summed separately in their real and imaginary parts.

    Args:
        values: Array with realizations stacked along axis 0.

    Returns:
        A numpy array with the leading axis removed.
    """
    values = np.asarray(values)
    if values.shape[0] == 0:
        raise EmptyEnsembleError("Cannot average an empty ensemble.")

    def _fsum_mean(part):
        flat = part.reshape(part.shape[0], -1)
        sums = [math.fsum(column) for column in flat.T]
        return (np.array(sums, dtype=float) / part.shape[0]).reshape(part.shape[1:])

    if np.iscomplexobj(values):
        mean = _fsum_mean(values.real) + 1j * _fsum_mean(values.imag)
    else:
        mean = _fsum_mean(values.astype(float))
    # Arithmetic on 0-d arrays yields numpy scalars
    return np.asarray(mean)
