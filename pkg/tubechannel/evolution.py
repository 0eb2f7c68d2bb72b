"""Cluster birth, death and drift over time.

The population of clusters changes from step to step, so it is stored in
fixed-capacity arrays with an ``alive`` mask (:class:`ClusterState`); rays are
padded the same way with a per-cluster ``ray_mask``. :class:`Cluster` and
:class:`Ray` are read-only views built on the host for inspection and output.
"""

import dataclasses
from typing import NamedTuple

import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import numpy as np
from jaxtyping import Array, ArrayLike, Bool, Float, Int, PRNGKeyArray

from tubechannel.distributions import Exponential, Poisson, VonMises, eam_table
from tubechannel.geometry import (
    SPEED_OF_LIGHT,
    MotionState,
    TubeScene,
    _ray_displacements,
    advance_rx,
)


class EvolutionParams(eqx.Module):
    """Parameters of the cluster birth-death process and of new-cluster draws.

    Args:
        birth_rate: Cluster generation rate per meter of travel.
        death_rate: Cluster recombination rate per meter of travel.
        correlation_distance: Distance scale of the survival probability, meters.
        delay_relaxation: Relaxation time of the virtual delay in seconds. May be
            ``inf`` (virtual delays never drift).
        roughness: Standard deviation of the wall surface height, meters.
        rho_s0: Scattering coefficient of a perfectly smooth wall.
        von_mises_k_tx: Concentration of departure angles around the LoS.
        von_mises_k_rx: Concentration of arrival angles around the LoS.
        mean_rays_per_cluster: Mean of the Poisson ray count.
        mean_virtual_delay: Mean of the exponential virtual delay, seconds.
        mean_intra_delay: Mean of the exponential intra-cluster delays, seconds.
        intra_power_decay: Delay scaling ``r_τ > 1`` of the ray power decay.
        per_ray_shadow_sigma: Per-ray log-normal shadowing in dB; 0 disables it.
        waveguide_factor: Whether births shrink as the link distance approaches
            the initial distance. Disabled for open-air approximations.
        birth_scale: Multiplier applied to the mean number of births.
    """

    birth_rate: float | int = 80.0
    death_rate: float | int = 4.0
    correlation_distance: float | int = 10.0
    delay_relaxation: float | int = 1e-3
    roughness: float | int = 0.0
    rho_s0: float | int = 1.0
    von_mises_k_tx: float | int = 6.0
    von_mises_k_rx: float | int = 6.0
    mean_rays_per_cluster: float | int = 8.0
    mean_virtual_delay: float | int = 30e-9
    mean_intra_delay: float | int = 5e-9
    intra_power_decay: float | int = 2.3
    per_ray_shadow_sigma: float | int = 0.0
    waveguide_factor: bool = True
    birth_scale: float | int = 1.0

    def __check_init__(self):
        positive = {
            "birth_rate": self.birth_rate,
            "death_rate": self.death_rate,
            "correlation_distance": self.correlation_distance,
            "delay_relaxation": self.delay_relaxation,
            "von_mises_k_tx": self.von_mises_k_tx,
            "von_mises_k_rx": self.von_mises_k_rx,
            "mean_rays_per_cluster": self.mean_rays_per_cluster,
            "mean_virtual_delay": self.mean_virtual_delay,
            "mean_intra_delay": self.mean_intra_delay,
            "birth_scale": self.birth_scale,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}.")
        if not 0 < self.rho_s0 <= 1:
            raise ValueError("rho_s0 must lie in (0, 1].")
        if self.roughness < 0:
            raise ValueError("roughness must be non-negative.")
        if not self.intra_power_decay > 1:
            raise ValueError("intra_power_decay must be greater than 1.")
        if self.per_ray_shadow_sigma < 0:
            raise ValueError("per_ray_shadow_sigma must be non-negative.")


class Ray(eqx.Module):
    """A ray of a cluster: angle offsets from the cluster mean, delay and power."""

    tx_azimuth_offset: float
    tx_elevation_offset: float
    rx_azimuth_offset: float
    rx_elevation_offset: float
    delay_offset: float
    power: float
    initial_phase: float

    def __check_init__(self):
        if self.power < 0:
            raise ValueError("Ray power must be non-negative.")
        if self.delay_offset < 0:
            raise ValueError("Ray delay offset must be non-negative.")
        if not 0 <= self.initial_phase < 2 * np.pi:
            raise ValueError("Initial phase must lie in [0, 2π).")


class Cluster(eqx.Module):
    """An effective cluster on the tube wall."""

    id: int
    tx_azimuth: float
    tx_elevation: float
    rx_azimuth: float
    rx_elevation: float
    virtual_delay: float
    delay: float
    rays: tuple[Ray, ...]
    birth_time: float

    def __check_init__(self):
        if len(self.rays) == 0:
            raise ValueError("A cluster needs at least one ray.")
        if self.virtual_delay < 0:
            raise ValueError("Virtual delay must be non-negative.")

    @property
    def power(self) -> float:
        return sum(ray.power for ray in self.rays)


class AngleTables(eqx.Module):
    """Equal area angle offsets for every ray count, at the Tx and at the Rx."""

    tx: Float[Array, "rows max_rays"]
    rx: Float[Array, "rows max_rays"]

    @classmethod
    def build(cls, params: EvolutionParams, max_rays: int) -> "AngleTables":
        return cls(
            tx=eam_table(params.von_mises_k_tx, max_rays),
            rx=eam_table(params.von_mises_k_rx, max_rays),
        )

    @property
    def max_rays(self) -> int:
        return self.tx.shape[1]


class ClusterState(eqx.Module):
    """Padded arrays holding every cluster slot of one channel realization.

    Angles are ordered ``(tx_azimuth, tx_elevation, rx_azimuth, rx_elevation)``.
    ``ray_weight`` is the unnormalized mean ray power that the delay-driven power
    update acts on; ``ray_power`` is the same quantity normalized over every alive
    ray. Empty slots hold zeros.
    """

    alive: Bool[Array, "c"]
    ids: Int[Array, "c"]
    angles: Float[Array, "c 4"]
    virtual_delay: Float[Array, "c"]
    delay: Float[Array, "c"]
    birth_time: Float[Array, "c"]
    ray_mask: Bool[Array, "c l"]
    ray_angles: Float[Array, "c l 4"]
    ray_delay: Float[Array, "c l"]
    ray_weight: Float[Array, "c l"]
    ray_power: Float[Array, "c l"]
    ray_phase: Float[Array, "c l"]
    next_id: Int[Array, ""]
    overflow: Int[Array, ""]

    @classmethod
    def empty(cls, capacity: int, max_rays: int) -> "ClusterState":
        """State with no clusters."""
        zeros = jnp.zeros((capacity,))
        ray_zeros = jnp.zeros((capacity, max_rays))
        return cls(
            alive=jnp.zeros((capacity,), bool),
            ids=jnp.zeros((capacity,), int),
            angles=jnp.zeros((capacity, 4)),
            virtual_delay=zeros,
            delay=zeros,
            birth_time=zeros,
            ray_mask=jnp.zeros((capacity, max_rays), bool),
            ray_angles=jnp.zeros((capacity, max_rays, 4)),
            ray_delay=ray_zeros,
            ray_weight=ray_zeros,
            ray_power=ray_zeros,
            ray_phase=ray_zeros,
            next_id=jnp.array(0),
            overflow=jnp.array(0),
        )

    @property
    def capacity(self) -> int:
        return self.alive.shape[-1]

    @property
    def max_rays(self) -> int:
        return self.ray_mask.shape[-1]

    @property
    def count(self) -> Array:
        """Number of alive clusters."""
        return jnp.sum(self.alive, axis=-1)

    @property
    def total_power(self) -> Array:
        """Sum of the normalized powers of every alive ray."""
        mask = self.ray_mask & self.alive[..., None]
        return jnp.sum(jnp.where(mask, self.ray_power, 0), axis=(-2, -1))

    def clusters(self) -> list[Cluster]:
        """Host-side views of the alive clusters, ordered by id."""
        arrays = {
            f.name: np.asarray(getattr(self, f.name)) for f in dataclasses.fields(self)
        }
        slots = sorted(np.flatnonzero(arrays["alive"]), key=lambda i: arrays["ids"][i])
        return [_slot_to_cluster(arrays, int(slot)) for slot in slots]


def _slot_to_cluster(arrays: dict, slot: int) -> Cluster:
    rays = tuple(
        Ray(
            *(float(a) for a in arrays["ray_angles"][slot, index]),
            delay_offset=float(arrays["ray_delay"][slot, index]),
            power=float(arrays["ray_power"][slot, index]),
            initial_phase=float(arrays["ray_phase"][slot, index]),
        )
        for index in np.flatnonzero(arrays["ray_mask"][slot])
    )
    return Cluster(
        int(arrays["ids"][slot]),
        *(float(a) for a in arrays["angles"][slot]),
        virtual_delay=float(arrays["virtual_delay"][slot]),
        delay=float(arrays["delay"][slot]),
        rays=rays,
        birth_time=float(arrays["birth_time"][slot]),
    )


def survival_probability(
    dt: ArrayLike, speed: ArrayLike, params: EvolutionParams
) -> Array:
    """Probability that a cluster survives a step of ``dt`` seconds.

    The probability decays exponentially with the distance travelled,
    ``exp(-death_rate * speed * dt / correlation_distance)``.
    """
    return jnp.exp(-params.death_rate * speed * dt / params.correlation_distance)


def scattering_coefficient(
    roughness: ArrayLike, mean_elevation: ArrayLike, wavelength: ArrayLike
) -> Array:
    """Scattering loss of a rough wall, ``exp(-8 (π σ_h cos β̄ / λ)²)``."""
    ratio = jnp.pi * roughness * jnp.cos(mean_elevation) / wavelength
    return jnp.exp(-8 * ratio**2)


def mean_new_clusters(
    survival: ArrayLike,
    los_distance: ArrayLike,
    initial_distance: ArrayLike,
    rho_s: ArrayLike,
    params: EvolutionParams,
) -> Array:
    """Mean of the Poisson number of clusters born in a step.

    The waveguide factor ``1 - los_distance / initial_distance`` is clipped to
    ``[0, 1]``, and replaced by one when ``params.waveguide_factor`` is off.
    """
    if params.waveguide_factor:
        waveguide = jnp.clip(1 - los_distance / initial_distance, 0, 1)
    else:
        waveguide = 1.0
    ratio = params.birth_scale * params.birth_rate / params.death_rate
    mean = ratio * (1 - survival) * waveguide * rho_s / params.rho_s0
    return jnp.maximum(mean, 0.0)


def ray_powers(
    delays: ArrayLike,
    params: EvolutionParams,
    key: PRNGKeyArray | None = None,
) -> Array:
    """Unnormalized ray powers decaying exponentially with intra-cluster delay.

    ``exp(-τ (r_τ - 1) / (r_τ · mean_intra_delay)) · 10^(-Z / 10)`` with
    ``Z ~ Normal(0, per_ray_shadow_sigma)``. A key is only needed when the
    shadowing is enabled.
    """
    delays = jnp.asarray(delays, float)
    decay = params.intra_power_decay
    weights = jnp.exp(-delays * (decay - 1) / (decay * params.mean_intra_delay))
    if params.per_ray_shadow_sigma > 0:
        if key is None:
            raise ValueError("A key is required when per-ray shadowing is enabled.")
        shadow = params.per_ray_shadow_sigma * jr.normal(key, delays.shape)
        weights = weights * 10 ** (-shadow / 10)
    return weights


def update_virtual_delay(
    virtual_delay: ArrayLike,
    dt: ArrayLike,
    relaxation: ArrayLike,
    fresh: ArrayLike,
) -> Array:
    """Relax the virtual delay toward a fresh draw with the same distribution."""
    keep = jnp.exp(-dt / relaxation)
    return keep * virtual_delay + (1 - keep) * fresh


def update_cluster_delay(
    rx_distance: ArrayLike, tx_distance: ArrayLike, virtual_delay: ArrayLike
) -> Array:
    """Cluster delay: both wall legs at the speed of light plus the virtual delay."""
    return jnp.asarray((rx_distance + tx_distance) / SPEED_OF_LIGHT + virtual_delay)


def update_ray_power(
    power: ArrayLike,
    old_delay: ArrayLike,
    new_delay: ArrayLike,
    ray_delay: ArrayLike,
) -> Array:
    """Scale a ray's mean power as its cluster delay changes, clamped at zero.

    The result is unnormalized; callers renormalize over every ray.
    """
    factor = (3 * old_delay - 2 * new_delay + ray_delay) / (old_delay + ray_delay)
    return jnp.maximum(power * factor, 0.0)


def _direction_angles(vector: Array) -> Array:
    """Azimuth and elevation of a direction vector."""
    azimuth = jnp.arctan2(vector[1], vector[0])
    elevation = jnp.arctan2(vector[2], jnp.hypot(vector[0], vector[1]))
    return jnp.stack([azimuth, elevation])


def _wrap(angle: Array) -> Array:
    return (angle + jnp.pi) % (2 * jnp.pi) - jnp.pi


class _ClusterDraw(NamedTuple):
    angles: Array
    virtual_delay: Array
    delay: Array
    ray_mask: Array
    ray_angles: Array
    ray_delay: Array
    ray_weight: Array
    ray_phase: Array


def _coupled_offsets(
    key: PRNGKeyArray, tables: AngleTables, ray_count: Array, ray_mask: Array
) -> Array:
    """Equal area offsets, randomly paired across the four angle dimensions."""
    rows_tx, rows_rx = tables.tx[ray_count], tables.rx[ray_count]
    rows = jnp.stack([rows_tx, rows_tx, rows_rx, rows_rx], axis=1)
    order_keys = jr.uniform(key, rows.shape)
    order_keys = jnp.where(ray_mask[:, None, :], order_keys, 2.0)
    order = jnp.argsort(order_keys, axis=-1)
    return jnp.moveaxis(jnp.take_along_axis(rows, order, axis=-1), 1, -1)


def _cluster_distances(
    angles: Array, scene: TubeScene, tx_center: Array, rx_center: Array
) -> tuple[Array, Array]:
    d_tx, d_rx = _ray_displacements(
        angles[..., :2],
        angles[..., 2:],
        scene.tx_origin,
        scene.rx_origin,
        tx_center,
        rx_center,
        scene.radius,
    )
    return jnp.linalg.norm(d_rx, axis=-1), jnp.linalg.norm(d_tx, axis=-1)


def _draw_clusters(
    key: PRNGKeyArray,
    count: int,
    *,
    scene: TubeScene,
    rx_center: Array,
    params: EvolutionParams,
    tables: AngleTables,
) -> _ClusterDraw:
    """Draw ``count`` independent new clusters around the current LoS direction."""
    max_rays = tables.max_rays
    keys = jr.split(key, 7)
    tx_center = scene.tx_reference
    los = rx_center - tx_center
    loc = jnp.concatenate([_direction_angles(los), _direction_angles(-los)])
    concentration = jnp.array(
        [params.von_mises_k_tx] * 2 + [params.von_mises_k_rx] * 2, float
    )
    angles = VonMises(loc, concentration).icdf(jr.uniform(keys[0], (count, 4)))
    angles = _wrap(angles)

    ray_count = Poisson(params.mean_rays_per_cluster).sample(keys[1], (count,))
    ray_count = jnp.clip(ray_count, 1, max_rays)
    ray_mask = jnp.arange(max_rays) < ray_count[:, None]
    ray_angles = _coupled_offsets(keys[2], tables, ray_count, ray_mask)

    virtual_delay = Exponential(params.mean_virtual_delay).sample(keys[3], (count,))
    intra = Exponential(params.mean_intra_delay).sample(keys[4], (count, max_rays))
    intra = jnp.where(ray_mask, intra, 0.0)
    weight = jnp.where(ray_mask, ray_powers(intra, params, keys[5]), 0.0)
    phase = jr.uniform(keys[6], (count, max_rays), maxval=2 * jnp.pi)
    phase = jnp.where(ray_mask, phase, 0.0)

    rx_distance, tx_distance = _cluster_distances(angles, scene, tx_center, rx_center)
    delay = update_cluster_delay(rx_distance, tx_distance, virtual_delay)
    return _ClusterDraw(
        angles=angles,
        virtual_delay=virtual_delay,
        delay=delay,
        ray_mask=ray_mask,
        ray_angles=ray_angles,
        ray_delay=intra,
        ray_weight=weight,
        ray_phase=phase,
    )


def _normalized(weight: Array, mask: Array) -> Array:
    weight = jnp.where(mask, weight, 0.0)
    total = jnp.sum(weight)
    return jnp.where(total > 0, weight / jnp.where(total > 0, total, 1.0), 0.0)


def _place_births(
    state: ClusterState,
    alive: Array,
    births: Array,
    draw: _ClusterDraw,
    time: ArrayLike,
) -> ClusterState:
    """Write drawn clusters into the first free slots and renormalize powers."""
    free = ~alive
    rank = jnp.cumsum(free) - 1
    take = free & (rank < births)
    taken = jnp.sum(take)

    def merge(new, old):
        mask = take.reshape(take.shape + (1,) * (new.ndim - 1))
        keep = alive.reshape(alive.shape + (1,) * (old.ndim - 1))
        return jnp.where(mask, new, jnp.where(keep, old, jnp.zeros_like(old)))

    alive = alive | take
    ray_mask = merge(draw.ray_mask, state.ray_mask)
    ray_weight = merge(draw.ray_weight, state.ray_weight)
    return ClusterState(
        alive=alive,
        ids=jnp.where(take, state.next_id + rank, jnp.where(alive, state.ids, 0)),
        angles=merge(draw.angles, state.angles),
        virtual_delay=merge(draw.virtual_delay, state.virtual_delay),
        delay=merge(draw.delay, state.delay),
        birth_time=merge(jnp.full(alive.shape, time, float), state.birth_time),
        ray_mask=ray_mask,
        ray_angles=merge(draw.ray_angles, state.ray_angles),
        ray_delay=merge(draw.ray_delay, state.ray_delay),
        ray_weight=ray_weight,
        ray_power=_normalized(ray_weight, ray_mask & alive[:, None]),
        ray_phase=merge(draw.ray_phase, state.ray_phase),
        next_id=state.next_id + taken,
        overflow=state.overflow + jnp.maximum(births - jnp.sum(free), 0),
    )


def initial_state(
    key: PRNGKeyArray,
    *,
    scene: TubeScene,
    motion: MotionState,
    params: EvolutionParams,
    tables: AngleTables,
    wavelength: float | int,
    capacity: int,
) -> ClusterState:
    """Cold start: a Poisson number of clusters near the steady-state population.

    The count has mean ``birth_scale · birth_rate / death_rate · ρ_s / ρ_s0`` with
    the scattering coefficient evaluated at zero mean elevation.
    """
    count_key, draw_key = jr.split(key)
    rho_s = scattering_coefficient(params.roughness, 0.0, wavelength)
    mean = params.birth_scale * params.birth_rate / params.death_rate
    births = Poisson(mean * rho_s / params.rho_s0).sample(count_key)
    rx_center = advance_rx(scene.rx_initial, motion.velocity, motion.time)
    draw = _draw_clusters(
        draw_key,
        capacity,
        scene=scene,
        rx_center=rx_center,
        params=params,
        tables=tables,
    )
    empty = ClusterState.empty(capacity, tables.max_rays)
    return _place_births(empty, empty.alive, births, draw, motion.time)


def sample_new_cluster(
    key: PRNGKeyArray,
    *,
    scene: TubeScene,
    motion: MotionState,
    params: EvolutionParams,
    tables: AngleTables,
    cluster_id: int = 0,
) -> Cluster:
    """Draw a single new cluster at the current time.

    Ray powers are normalized within the cluster, as if it were the only one.
    """
    rx_center = advance_rx(scene.rx_initial, motion.velocity, motion.time)
    draw = _draw_clusters(
        key, 1, scene=scene, rx_center=rx_center, params=params, tables=tables
    )
    arrays = {k: np.asarray(v) for k, v in draw._asdict().items()}
    arrays["ray_power"] = np.asarray(_normalized(draw.ray_weight, draw.ray_mask))
    arrays["ids"] = np.array([cluster_id])
    arrays["birth_time"] = np.array([float(motion.time)])
    return _slot_to_cluster(arrays, 0)


def evolve_step(
    state: ClusterState,
    key: PRNGKeyArray,
    *,
    dt: ArrayLike,
    scene: TubeScene,
    motion: MotionState,
    params: EvolutionParams,
    tables: AngleTables,
    wavelength: float | int,
) -> ClusterState:
    """Advance the cluster population from ``motion.time`` to ``motion.time + dt``.

    Each alive cluster survives independently. Survivors get a relaxed virtual
    delay, a new cluster delay for the moved receiver and rescaled ray powers;
    a cluster whose rays all fade to zero power dies. New clusters are then born
    into free slots with ids that are never reused, and the powers of all rays
    are normalized to sum to one.

    Args:
        state: Cluster population at ``motion.time``.
        key: Jax random key.
        dt: Step length in seconds.
        scene: The tube scene.
        motion: Rx velocity and the time at the start of the step.
        params: Birth-death process parameters.
        tables: Equal area offsets for new clusters.
        wavelength: Carrier wavelength in meters.

    Returns:
        The cluster population at ``motion.time + dt``.
    """
    survive_key, delay_key, birth_key, draw_key = jr.split(key, 4)
    time = motion.time + dt
    rx_center = advance_rx(scene.rx_initial, motion.velocity, time)

    survival = survival_probability(dt, motion.speed, params)
    alive = state.alive & (jr.uniform(survive_key, state.alive.shape) < survival)

    fresh = Exponential(params.mean_virtual_delay).sample(delay_key, alive.shape)
    virtual_delay = update_virtual_delay(
        state.virtual_delay, dt, params.delay_relaxation, fresh
    )
    rx_distance, tx_distance = _cluster_distances(
        state.angles, scene, scene.tx_reference, rx_center
    )
    delay = update_cluster_delay(rx_distance, tx_distance, virtual_delay)
    old_delay = jnp.where(alive, state.delay, 1.0)[:, None]
    ray_weight = update_ray_power(
        state.ray_weight, old_delay, delay[:, None], state.ray_delay
    )
    ray_weight = jnp.where(state.ray_mask & alive[:, None], ray_weight, 0.0)
    alive = alive & jnp.any(ray_weight > 0, axis=-1)

    count = jnp.sum(alive)
    mean_elevation = jnp.sum(jnp.where(alive, state.angles[:, 3], 0.0))
    mean_elevation = mean_elevation / jnp.maximum(count, 1)
    rho_s = scattering_coefficient(params.roughness, mean_elevation, wavelength)
    los_distance = jnp.linalg.norm(rx_center - scene.tx_reference)
    mean_births = mean_new_clusters(
        survival, los_distance, scene.initial_distance, rho_s, params
    )
    births = Poisson(mean_births).sample(birth_key)

    survivors = ClusterState(
        alive=alive,
        ids=state.ids,
        angles=state.angles,
        virtual_delay=virtual_delay,
        delay=delay,
        birth_time=state.birth_time,
        ray_mask=state.ray_mask,
        ray_angles=state.ray_angles,
        ray_delay=state.ray_delay,
        ray_weight=ray_weight,
        ray_power=state.ray_power,
        ray_phase=state.ray_phase,
        next_id=state.next_id,
        overflow=state.overflow,
    )
    draw = _draw_clusters(
        draw_key,
        state.capacity,
        scene=scene,
        rx_center=rx_center,
        params=params,
        tables=tables,
    )
    return _place_births(survivors, alive, births, draw, time)
