"""Tube scene geometry.

The tube is a cylinder of radius ``R`` whose axis runs along ``x`` at height
``axis_height``. Positions and velocities are JAX arrays with a trailing axis of
size 3. The public functions validate concrete inputs and raise on degenerate
geometry; the underscore kernels are the jit-safe versions used by the
simulator.
"""

from functools import partial

import equinox as eqx
import jax.numpy as jnp
import numpy as np
from jaxtyping import Array, ArrayLike, Float

from tubechannel.utils import arraylike_to_array

SPEED_OF_LIGHT = 299_792_458.0

# Smallest admissible 1 - cos²β·cos²α inside jitted code.
_MIN_WALL_DENOMINATOR = 1e-12


class DegenerateGeometryError(ValueError):
    """Raised when a quantity needs a direction but the vector has zero length."""


class NoWallIntersectionError(ValueError):
    """Raised when a ray runs parallel to the tube axis and never meets the wall."""


def _as_vector(x: ArrayLike, name: str) -> Array:
    return arraylike_to_array(x, name, trailing=3, dtype=float)


class TubeScene(eqx.Module):
    """The vacuum tube and the fixed reference positions of the link.

    Args:
        radius: Tube cross-section radius in meters. Defaults to 2.
        axis_height: Height of the tube axis above ``z = 0``. Defaults to 2, which
            puts the wall top at ``z = 4``.
        tx_reference: Centre of the transmit array. Defaults to ``(0, 0, 4)``.
        rx_initial: Centre of the receive array at ``t = 0``. Defaults to
            ``(600, 0, 3)``.
    """

    radius: float
    axis_height: float
    tx_reference: Float[Array, "3"]
    rx_initial: Float[Array, "3"]

    def __init__(
        self,
        radius: float | int = 2.0,
        axis_height: float | int = 2.0,
        tx_reference: ArrayLike | None = None,
        rx_initial: ArrayLike | None = None,
    ):
        self.radius = float(radius)
        self.axis_height = float(axis_height)
        tx_reference = [0.0, 0.0, 4.0] if tx_reference is None else tx_reference
        rx_initial = [600.0, 0.0, 3.0] if rx_initial is None else rx_initial
        self.tx_reference = _as_vector(jnp.asarray(tx_reference), "tx_reference")
        self.rx_initial = _as_vector(jnp.asarray(rx_initial), "rx_initial")

    def __check_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive.")
        if float(self.initial_distance) <= 0:
            raise ValueError("Tx and Rx must not coincide at t=0.")
        endpoints = jnp.stack([self.tx_reference, self.rx_initial])
        if not np.all(np.asarray(self.contains(endpoints))):
            raise ValueError("Tx and Rx positions must lie inside the tube.")

    @property
    def initial_displacement(self) -> Array:
        """Initial vector from the Tx array centre to the Rx array centre."""
        return self.rx_initial - self.tx_reference

    @property
    def initial_distance(self) -> Array:
        """Length of the initial displacement."""
        return jnp.linalg.norm(self.initial_displacement)

    @property
    def tx_origin(self) -> Array:
        """Axis point below the Tx array centre; origin of the Tx local frame."""
        return jnp.array([self.tx_reference[0], 0.0, self.axis_height])

    @property
    def rx_origin(self) -> Array:
        """Axis point below the initial Rx array centre; origin of the Rx frame."""
        return jnp.array([self.rx_initial[0], 0.0, self.axis_height])

    def contains(self, points: ArrayLike) -> Array:
        """Whether points lie inside the tube or on its wall."""
        points = _as_vector(points, "points")
        r2 = points[..., 1] ** 2 + (points[..., 2] - self.axis_height) ** 2
        return r2 <= self.radius**2 * (1 + 1e-12)


class AntennaArray(eqx.Module):
    """Absolute antenna element positions at one time instant.

    Args:
        positions: Element positions with shape ``(element_count, 3)``.
        spacing: Distance between adjacent elements in meters.
    """

    positions: Float[Array, "n 3"]
    spacing: float

    def __init__(self, positions: ArrayLike, spacing: float | int):
        self.positions = _as_vector(positions, "positions")
        self.spacing = float(spacing)

    def __check_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[0] < 1:
            raise ValueError("positions must have shape (element_count, 3).")
        if self.element_count > 1:
            gaps = np.linalg.norm(np.diff(np.asarray(self.positions), axis=0), axis=-1)
            if not np.allclose(gaps, self.spacing, rtol=1e-9, atol=0):
                raise ValueError("Adjacent elements must be separated by spacing.")

    @property
    def element_count(self) -> int:
        return self.positions.shape[0]

    @property
    def center(self) -> Array:
        return self.positions.mean(axis=0)


def _linear_positions(
    center: Array, element_count: int, spacing: ArrayLike, axis: Array
) -> Array:
    index = jnp.arange(element_count) - (element_count - 1) / 2
    return center + index[:, None] * spacing * axis / jnp.linalg.norm(axis)


def uniform_linear_array(
    center: ArrayLike,
    element_count: int,
    spacing: float | int,
    axis: ArrayLike | None = None,
) -> AntennaArray:
    """Uniform linear array centred on ``center``, by default along the tube axis.

    Example:
        .. doctest::

            >>> import jax.numpy as jnp
            >>> arr = uniform_linear_array(jnp.array([0.0, 0, 4]), 2, 0.5)
            >>> arr.positions[:, 0].tolist()
            [-0.25, 0.25]
    """
    if element_count < 1:
        raise ValueError("element_count must be a positive integer.")
    center = _as_vector(center, "center")
    axis = jnp.array([1.0, 0, 0]) if axis is None else _as_vector(axis, "axis")
    positions = _linear_positions(center, element_count, spacing, axis)
    return AntennaArray(positions, spacing)


class MotionState(eqx.Module):
    """Velocity of the receive array and the current time.

    Only the receiver moves and its velocity is constant over a run.
    """

    velocity: Float[Array, "3"]
    time: ArrayLike = 0.0

    def __init__(self, velocity: ArrayLike, time: ArrayLike = 0.0):
        self.velocity = _as_vector(velocity, "velocity")
        self.time = time

    @property
    def speed(self) -> Array:
        return jnp.linalg.norm(self.velocity)


def los_vector(tx_element: ArrayLike, rx_element: ArrayLike) -> Array:
    """Vector from a Tx element to an Rx element."""
    return _as_vector(rx_element, "rx_element") - _as_vector(tx_element, "tx_element")


def los_delay(d: ArrayLike) -> Array:
    """Propagation delay in seconds along the vector ``d``."""
    return jnp.linalg.norm(_as_vector(d, "d"), axis=-1) / SPEED_OF_LIGHT


def _projected_doppler(d: Array, velocity: Array, wavelength: ArrayLike) -> Array:
    norm = jnp.linalg.norm(d, axis=-1)
    safe_norm = jnp.where(norm > 0, norm, 1.0)
    return jnp.sum(d * velocity, axis=-1) / safe_norm / wavelength


def los_doppler(d: ArrayLike, velocity: ArrayLike, wavelength: float | int) -> Array:
    """Doppler shift as the velocity projected on ``d`` divided by the wavelength.

    The sign follows the projection directly: an Rx moving against ``d`` (toward
    the Tx) gives a negative shift.

    Args:
        d: Tx-to-Rx vector (or any propagation vector ending at the Rx).
        velocity: Rx velocity in m/s.
        wavelength: Carrier wavelength in meters.
    """
    d = _as_vector(d, "d")
    velocity = _as_vector(velocity, "velocity")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive.")
    if np.any(np.linalg.norm(np.asarray(d), axis=-1) == 0):
        raise DegenerateGeometryError("Doppler is undefined for a zero-length vector.")
    return _projected_doppler(d, velocity, wavelength)


def _wall_denominator(azimuth: ArrayLike, elevation: ArrayLike) -> Array:
    return 1 - (jnp.cos(elevation) * jnp.cos(azimuth)) ** 2


def _wall_point(azimuth: ArrayLike, elevation: ArrayLike, radius: ArrayLike) -> Array:
    denominator = jnp.maximum(
        _wall_denominator(azimuth, elevation), _MIN_WALL_DENOMINATOR
    )
    scale = radius / jnp.sqrt(denominator)
    direction = jnp.stack(
        [
            jnp.cos(elevation) * jnp.cos(azimuth),
            jnp.cos(elevation) * jnp.sin(azimuth),
            jnp.sin(elevation),
        ],
        axis=-1,
    )
    return scale[..., None] * direction


def wall_point_from_angles(
    azimuth: ArrayLike, elevation: ArrayLike, radius: float | int
) -> Array:
    """Point where a ray leaving the tube axis hits the wall.

    The point is expressed in a local frame whose origin sits on the axis, so
    ``y² + z² = R²``.

    Args:
        azimuth: Azimuth angle in radians, measured from the tube axis.
        elevation: Elevation angle in radians.
        radius: Tube radius in meters.

    Example:
        .. doctest::

            >>> import jax.numpy as jnp
            >>> wall_point_from_angles(jnp.pi / 2, 0.0, 2.0).round(6).tolist()
            [0.0, 2.0, 0.0]
    """
    azimuth = arraylike_to_array(azimuth, "azimuth", dtype=float)
    elevation = arraylike_to_array(elevation, "elevation", dtype=float)
    if np.any(np.asarray(_wall_denominator(azimuth, elevation)) <= 0):
        raise NoWallIntersectionError("Ray is parallel to the tube axis.")
    return _wall_point(azimuth, elevation, radius)


@partial(jnp.vectorize, signature="(2),(2),(3),(3),(3),(3)->(3),(3)", excluded={6})
def _ray_displacements(
    tx_angles, rx_angles, tx_origin, rx_origin, tx_element, rx_element, radius
):
    tx_wall = _wall_point(tx_angles[0], tx_angles[1], radius) + tx_origin
    rx_wall = _wall_point(rx_angles[0], rx_angles[1], radius) + rx_origin
    return tx_wall - tx_element, rx_wall - rx_element


def ray_displacements(
    tx_angles: ArrayLike,
    rx_angles: ArrayLike,
    scene: TubeScene,
    tx_element: ArrayLike,
    rx_element: ArrayLike,
) -> tuple[Array, Array]:
    """Vectors from the Tx element to the wall and from the Rx element to the wall.

    The Tx-side wall point is placed in the frame on the axis below the Tx array
    centre. The Rx-side wall point is placed in the frame on the axis below the
    initial Rx centre (Tx reference plus the initial displacement), so it stays
    fixed while the Rx moves.

    Args:
        tx_angles: ``(azimuth, elevation)`` of departure, shape ``(..., 2)``.
        rx_angles: ``(azimuth, elevation)`` of arrival, shape ``(..., 2)``.
        scene: The tube scene.
        tx_element: Tx element position.
        rx_element: Rx element position at the current time.

    Returns:
        The tuple ``(d_tx, d_rx)``.
    """
    tx_angles = arraylike_to_array(tx_angles, "tx_angles", dtype=float)
    rx_angles = arraylike_to_array(rx_angles, "rx_angles", dtype=float)
    for angles in (tx_angles, rx_angles):
        if np.any(np.asarray(_wall_denominator(angles[..., 0], angles[..., 1])) <= 0):
            raise NoWallIntersectionError("Ray is parallel to the tube axis.")
    return _ray_displacements(
        tx_angles,
        rx_angles,
        scene.tx_origin,
        scene.rx_origin,
        _as_vector(tx_element, "tx_element"),
        _as_vector(rx_element, "rx_element"),
        scene.radius,
    )


def advance_rx(position: ArrayLike, velocity: ArrayLike, dt: ArrayLike) -> Array:
    """Move Rx element positions by ``velocity * dt``.

    All elements move together, so the array shape is preserved.
    """
    if isinstance(dt, int | float) and dt < 0:
        raise ValueError("dt must be non-negative.")
    return _as_vector(position, "position") + _as_vector(velocity, "velocity") * dt
