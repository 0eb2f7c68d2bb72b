"""Channel impulse responses, transfer functions and the large-scale gain.

A :class:`ChannelSnapshot` stores every tap of every antenna pair as padded
arrays: one LoS tap per pair plus one NLoS tap per ray slot of the cluster
state, with masked slots carrying zero amplitude. :meth:`ChannelSnapshot.components`
returns the taps of one pair as :class:`PathComponent` objects.
"""

from typing import Literal

import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import numpy as np
from jaxtyping import Array, ArrayLike, Bool, Complex, Float, Int, PRNGKeyArray

from tubechannel.evolution import ClusterState
from tubechannel.geometry import (
    SPEED_OF_LIGHT,
    AntennaArray,
    DegenerateGeometryError,
    MotionState,
    TubeScene,
    _as_vector,
    _projected_doppler,
    _ray_displacements,
)


class PathComponent(eqx.Module):
    """A single tap of the impulse response of one antenna pair.

    ``cluster_id`` and ``ray_index`` are ``None`` for the LoS tap.
    """

    amplitude: complex
    delay: float
    doppler: float
    kind: Literal["los", "nlos"]
    cluster_id: int | None = None
    ray_index: int | None = None

    def __check_init__(self):
        if (self.kind == "los") != (self.cluster_id is None):
            raise ValueError("Only NLoS components carry a cluster id.")

    @property
    def power(self) -> float:
        return abs(self.amplitude) ** 2


class RicianModel(eqx.Module):
    """Rician K factor, optionally varying linearly in dB with travelled distance.

    Args:
        k_factor: Linear power ratio of the LoS tap to the scattered taps at the
            start of the run. ``inf`` gives a pure LoS channel.
        slope_db_per_m: Change of the K factor in dB per meter travelled.
    """

    k_factor: float | int = 10 ** 0.6
    slope_db_per_m: float | int = 0.0

    def __check_init__(self):
        if self.k_factor < 0:
            raise ValueError("The K factor must be non-negative.")

    @classmethod
    def from_db(cls, k_db: float | int, slope_db_per_m: float | int = 0.0):
        """Build from a K factor given in dB."""
        return cls(10 ** (k_db / 10), slope_db_per_m)

    def k_at(self, travelled: ArrayLike) -> Array:
        """Linear K factor after the receiver has travelled ``travelled`` meters."""
        if self.slope_db_per_m == 0 or self.k_factor in (0, float("inf")):
            return jnp.asarray(self.k_factor, float) + 0 * jnp.asarray(travelled)
        k_db = 10 * np.log10(self.k_factor) + self.slope_db_per_m * travelled
        return jnp.asarray(10 ** (k_db / 10), float)


def los_fraction(k_factor: ArrayLike) -> Array:
    """Power fraction ``K / (K + 1)`` of the LoS tap."""
    k_factor = jnp.asarray(k_factor, float)
    finite = jnp.where(jnp.isinf(k_factor), 0.0, k_factor)
    return jnp.where(jnp.isinf(k_factor), 1.0, finite / (finite + 1))


def nlos_fraction(k_factor: ArrayLike) -> Array:
    """Power fraction ``1 / (K + 1)`` shared by the scattered taps."""
    return 1 / (jnp.asarray(k_factor, float) + 1)


class LargeScaleGain(eqx.Module):
    """Path loss, shadowing, blockage and absorption terms in dB.

    Each term is a loss, so positive values attenuate the channel.
    """

    pl_db: float | int
    sh_db: float | int = 0.0
    bl_db: float | int = 0.0
    ol_db: float | int = 0.0

    @property
    def total_db(self) -> float:
        return self.pl_db + self.sh_db + self.bl_db + self.ol_db

    @property
    def amplitude_factor(self) -> float:
        """Factor applied to every tap amplitude, ``10^(-total_db / 20)``."""
        return 10 ** (-self.total_db / 20)


class ChannelSnapshot(eqx.Module):
    """Impulse response of every antenna pair at one time instant.

    Leading axes ``p`` and ``q`` index the Tx and Rx elements; ``c`` and ``l``
    index cluster slots and ray slots.
    """

    time: ArrayLike
    los_amplitude: Complex[Array, "p q"]
    los_delay: Float[Array, "p q"]
    los_doppler: Float[Array, "p q"]
    nlos_amplitude: Complex[Array, "p q c l"]
    nlos_delay: Float[Array, "p q c l"]
    nlos_doppler: Float[Array, "p q c l"]
    ray_mask: Bool[Array, "c l"]
    cluster_ids: Int[Array, "c"]

    @property
    def shape(self) -> tuple[int, int]:
        """Number of Tx and Rx elements."""
        return self.los_amplitude.shape[-2:]

    def total_power(self) -> Array:
        """Summed tap power of each antenna pair, shape ``(p, q)``."""
        nlos = jnp.sum(jnp.abs(self.nlos_amplitude) ** 2, axis=(-2, -1))
        return jnp.abs(self.los_amplitude) ** 2 + nlos

    def tap_arrays(self, *, include_los: bool = True) -> tuple[Array, Array]:
        """Amplitudes and delays of every tap, flattened to shape ``(p, q, taps)``."""
        p, q = self.shape
        amplitude = self.nlos_amplitude.reshape(p, q, -1)
        delay = self.nlos_delay.reshape(p, q, -1)
        if include_los:
            amplitude = jnp.concatenate([self.los_amplitude[..., None], amplitude], -1)
            delay = jnp.concatenate([self.los_delay[..., None], delay], -1)
        return amplitude, delay

    def components(self, p: int, q: int) -> list[PathComponent]:
        """The LoS tap followed by the NLoS taps of pair ``(p, q)``, ordered by
        cluster id and ray index."""
        comps = [
            PathComponent(
                complex(self.los_amplitude[p, q]),
                float(self.los_delay[p, q]),
                float(self.los_doppler[p, q]),
                "los",
            )
        ]
        ids = np.asarray(self.cluster_ids)
        mask = np.asarray(self.ray_mask)
        alive = np.flatnonzero(mask.any(axis=-1))
        for slot in sorted(alive, key=lambda s: ids[s]):
            for ray in np.flatnonzero(mask[slot]):
                comps.append(
                    PathComponent(
                        complex(self.nlos_amplitude[p, q, slot, ray]),
                        float(self.nlos_delay[p, q, slot, ray]),
                        float(self.nlos_doppler[p, q, slot, ray]),
                        "nlos",
                        cluster_id=int(ids[slot]),
                        ray_index=int(ray),
                    )
                )
        return comps

    def scaled(self, gain: "LargeScaleGain | ArrayLike") -> "ChannelSnapshot":
        """Snapshot with every amplitude multiplied by a large-scale gain."""
        if isinstance(gain, LargeScaleGain):
            gain = gain.amplitude_factor
        return eqx.tree_at(
            lambda s: (s.los_amplitude, s.nlos_amplitude),
            self,
            (self.los_amplitude * gain, self.nlos_amplitude * gain),
        )


def _los_coefficient(los_power, d, velocity, wavelength, time):
    distance = jnp.linalg.norm(d, axis=-1)
    doppler = _projected_doppler(d, velocity, wavelength)
    phase = -2 * jnp.pi * distance / wavelength + 2 * jnp.pi * doppler * time
    return jnp.sqrt(los_power) * jnp.exp(1j * phase), doppler


def los_coefficient(
    k_factor: ArrayLike,
    d_los: ArrayLike,
    velocity: ArrayLike,
    wavelength: float | int,
    time: ArrayLike,
) -> Array:
    """Complex gain of the LoS tap.

    ``sqrt(K / (K + 1)) · exp(-j 2π ‖d‖ / λ) · exp(j 2π f t)``, with ``f`` the
    Doppler shift of :func:`~tubechannel.geometry.los_doppler`.

    Example:
        .. doctest::

            >>> import jax.numpy as jnp
            >>> h = los_coefficient(1.0, jnp.array([1.0, 0, 0]), jnp.zeros(3), 0.5, 0.0)
            >>> round(float(abs(h)), 5)
            0.70711
    """
    d_los = _as_vector(d_los, "d_los")
    if np.any(np.linalg.norm(np.asarray(d_los), axis=-1) == 0):
        raise DegenerateGeometryError("The LoS vector has zero length.")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive.")
    velocity = _as_vector(velocity, "velocity")
    coefficient, _ = _los_coefficient(
        los_fraction(k_factor), d_los, velocity, wavelength, time
    )
    return coefficient


def nlos_coefficient(
    ray_power: ArrayLike,
    k_factor: ArrayLike,
    phase: ArrayLike,
    total_distance: ArrayLike,
    doppler: ArrayLike,
    wavelength: ArrayLike,
    time: ArrayLike,
) -> Array:
    """Complex gain of one scattered ray.

    ``sqrt(P / (K + 1)) · exp(j (φ - 2π D / λ)) · exp(j 2π f t)``, where ``D`` is
    the total path length including the virtual link ``τ̃ c``.
    """
    ray_power = jnp.asarray(ray_power, float)
    amplitude = jnp.sqrt(ray_power * nlos_fraction(k_factor))
    angle = phase - 2 * jnp.pi * total_distance / wavelength
    return amplitude * jnp.exp(1j * (angle + 2 * jnp.pi * doppler * time))


def _assemble_cir(
    state: ClusterState,
    *,
    scene: TubeScene,
    tx_positions: Array,
    rx_positions: Array,
    velocity: Array,
    k_factor: ArrayLike,
    wavelength: ArrayLike,
    time: ArrayLike,
) -> ChannelSnapshot:
    tx = tx_positions[:, None]
    rx = rx_positions[None, :]
    mask = state.ray_mask & state.alive[:, None]
    # With no scattered rays the LoS tap carries the whole unit power
    los_power = jnp.where(jnp.any(mask), los_fraction(k_factor), 1.0)
    los_amp, los_dop = _los_coefficient(
        los_power, rx - tx, velocity, wavelength, time
    )

    ray_angles = state.angles[:, None, :] + state.ray_angles
    d_tx, d_rx = _ray_displacements(
        ray_angles[..., :2],
        ray_angles[..., 2:],
        scene.tx_origin,
        scene.rx_origin,
        tx[..., None, None, :],
        rx[..., None, None, :],
        scene.radius,
    )
    total_distance = (
        jnp.linalg.norm(d_tx, axis=-1)
        + jnp.linalg.norm(d_rx, axis=-1)
        + state.virtual_delay[:, None] * SPEED_OF_LIGHT
    )
    doppler = _projected_doppler(d_rx, velocity, wavelength)
    power = jnp.where(mask, state.ray_power, 0.0)
    amplitude = nlos_coefficient(
        power, k_factor, state.ray_phase, total_distance, doppler, wavelength, time
    )
    amplitude = jnp.where(mask, amplitude, 0)
    delay = jnp.where(mask, state.delay[:, None] + state.ray_delay, 0.0)
    return ChannelSnapshot(
        time=time,
        los_amplitude=los_amp,
        los_delay=jnp.linalg.norm(rx - tx, axis=-1) / SPEED_OF_LIGHT,
        los_doppler=los_dop,
        nlos_amplitude=amplitude,
        nlos_delay=jnp.broadcast_to(delay, amplitude.shape),
        nlos_doppler=jnp.where(mask, doppler, 0.0),
        ray_mask=mask,
        cluster_ids=state.ids,
    )


def assemble_cir(
    state: ClusterState,
    *,
    scene: TubeScene,
    tx_array: AntennaArray,
    rx_array: AntennaArray,
    motion: MotionState,
    k_factor: ArrayLike,
    wavelength: float | int,
) -> ChannelSnapshot:
    """Impulse response of every antenna pair at ``motion.time``.

    Each pair gets the LoS tap at ``‖d‖ / c`` and one NLoS tap per ray at the
    cluster delay plus the ray's delay offset. Ray phases and Dopplers use the
    wall vectors of the individual elements; tap delays use the cluster delay
    of the array centres.

    With no alive ray the LoS tap carries the whole unit power.

    Args:
        state: Cluster population at ``motion.time``.
        scene: The tube scene.
        tx_array: Tx element positions.
        rx_array: Rx element positions at ``motion.time``.
        motion: Rx velocity and the current time.
        k_factor: Linear Rician K factor.
        wavelength: Carrier wavelength in meters.
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive.")
    los = rx_array.positions[None, :] - tx_array.positions[:, None]
    if np.any(np.linalg.norm(np.asarray(los), axis=-1) == 0):
        raise DegenerateGeometryError("A Tx element coincides with an Rx element.")
    return _assemble_cir(
        state,
        scene=scene,
        tx_positions=tx_array.positions,
        rx_positions=rx_array.positions,
        velocity=motion.velocity,
        k_factor=k_factor,
        wavelength=wavelength,
        time=motion.time,
    )


def transfer_function(
    snapshot: ChannelSnapshot, frequencies: ArrayLike
) -> Complex[Array, "p q f"]:
    """Fourier transform of the impulse response on a frequency grid.

    ``H(f) = Σ a · exp(-j 2π τ f)`` over every tap of each antenna pair.

    Args:
        snapshot: The impulse response.
        frequencies: Frequencies in hertz, relative to the carrier.

    Returns:
        Complex array with shape ``(p, q, len(frequencies))``.
    """
    frequencies = jnp.atleast_1d(jnp.asarray(frequencies, float))
    amplitude, delay = snapshot.tap_arrays()
    phase = jnp.exp(-2j * jnp.pi * delay[..., None] * frequencies)
    return jnp.sum(amplitude[..., None] * phase, axis=-2)


def composite_gain(
    distance: float | int,
    wavelength: float | int,
    *,
    model: Literal["free-space", "unity"] = "free-space",
    shadow_sigma_db: float | int = 0.0,
    key: PRNGKeyArray | None = None,
) -> LargeScaleGain:
    """Large-scale terms of the composite channel for a link of length ``distance``.

    ``"free-space"`` gives the path loss ``20 log10(4π d / λ)`` and, when
    ``shadow_sigma_db > 0``, a log-normal shadowing draw (``key`` is then required).
    ``"unity"`` sets every term to 0 dB. Blockage and absorption are always 0 dB.
    """
    if distance <= 0:
        raise DegenerateGeometryError("Path loss is undefined at zero distance.")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive.")
    if shadow_sigma_db < 0:
        raise ValueError("shadow_sigma_db must be non-negative.")
    if model == "unity":
        return LargeScaleGain(0.0)
    if model != "free-space":
        raise ValueError(f"Unknown gain model {model!r}.")
    pl_db = 20 * float(np.log10(4 * np.pi * distance / wavelength))
    sh_db = 0.0
    if shadow_sigma_db > 0:
        if key is None:
            raise ValueError("A key is required when shadowing is enabled.")
        sh_db = float(shadow_sigma_db * jr.normal(key))
    return LargeScaleGain(pl_db, sh_db)
