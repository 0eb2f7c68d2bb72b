"""The channel model: scene, arrays, motion, carrier and evolution parameters."""

import equinox as eqx
import jax.numpy as jnp
from jaxtyping import Array, ArrayLike, Float, PRNGKeyArray

from tubechannel.cir import ChannelSnapshot, RicianModel, _assemble_cir
from tubechannel.evolution import (
    AngleTables,
    ClusterState,
    EvolutionParams,
    evolve_step,
    initial_state,
)
from tubechannel.geometry import (
    SPEED_OF_LIGHT,
    AntennaArray,
    MotionState,
    TubeScene,
    _as_vector,
    _linear_positions,
    advance_rx,
    uniform_linear_array,
)

_TUBE_AXIS = jnp.array([1.0, 0.0, 0.0])


class ChannelModel(eqx.Module):
    """Everything needed to evolve and synthesize one tube channel.

    Args:
        scene: The tube and the reference positions.
        velocity: Rx velocity in m/s.
        carrier_frequency: Carrier frequency in hertz.
        params: Cluster evolution parameters.
        rician: Rician K factor model.
        tx_elements: Number of Tx elements. Defaults to 2.
        rx_elements: Number of Rx elements. Defaults to 2.
        spacing_wavelengths: Element spacing of both arrays, in wavelengths.
            Defaults to 1.
        capacity: Maximum number of simultaneously alive clusters. Defaults to 64.
        max_rays: Maximum number of rays per cluster. Defaults to 24.
    """

    scene: TubeScene
    velocity: Float[Array, "3"]
    carrier_frequency: float
    params: EvolutionParams
    rician: RicianModel
    tx_elements: int
    rx_elements: int
    spacing_wavelengths: float
    capacity: int
    max_rays: int
    tables: AngleTables

    def __init__(
        self,
        scene: TubeScene,
        velocity: ArrayLike,
        carrier_frequency: float | int,
        params: EvolutionParams,
        rician: RicianModel | None = None,
        *,
        tx_elements: int = 2,
        rx_elements: int = 2,
        spacing_wavelengths: float | int = 1.0,
        capacity: int = 64,
        max_rays: int = 24,
    ):
        self.scene = scene
        self.velocity = _as_vector(jnp.asarray(velocity, float), "velocity")
        self.carrier_frequency = float(carrier_frequency)
        self.params = params
        self.rician = RicianModel() if rician is None else rician
        self.tx_elements = tx_elements
        self.rx_elements = rx_elements
        self.spacing_wavelengths = float(spacing_wavelengths)
        self.capacity = capacity
        self.max_rays = max_rays
        self.tables = AngleTables.build(params, max_rays)

    def __check_init__(self):
        if self.carrier_frequency <= 0:
            raise ValueError("carrier_frequency must be positive.")
        if self.tx_elements < 1 or self.rx_elements < 1:
            raise ValueError("Arrays need at least one element.")
        if self.spacing_wavelengths <= 0:
            raise ValueError("spacing_wavelengths must be positive.")
        if self.capacity < 1 or self.max_rays < 1:
            raise ValueError("capacity and max_rays must be positive.")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def spacing(self) -> float:
        """Element spacing in meters."""
        return self.spacing_wavelengths * self.wavelength

    @property
    def speed(self) -> Array:
        return jnp.linalg.norm(self.velocity)

    @property
    def tx_array(self) -> AntennaArray:
        return uniform_linear_array(
            self.scene.tx_reference, self.tx_elements, self.spacing
        )

    def rx_array(self, time: float | int = 0.0) -> AntennaArray:
        """Rx element positions at ``time``."""
        return AntennaArray(self.rx_positions(time), self.spacing)

    def tx_positions(self) -> Array:
        return _linear_positions(
            self.scene.tx_reference, self.tx_elements, self.spacing, _TUBE_AXIS
        )

    def rx_positions(self, time: ArrayLike = 0.0) -> Array:
        """Rx element positions at ``time``; safe to call under jit."""
        start = _linear_positions(
            self.scene.rx_initial, self.rx_elements, self.spacing, _TUBE_AXIS
        )
        return advance_rx(start, self.velocity, time)

    def motion(self, time: ArrayLike = 0.0) -> MotionState:
        return MotionState(self.velocity, time)

    def k_factor(self, time: ArrayLike) -> Array:
        """Linear K factor at ``time`` for the configured distance schedule."""
        return self.rician.k_at(self.speed * time)

    def los_distance(self, time: ArrayLike) -> Array:
        """Distance between the array centres at ``time``."""
        rx_center = self.scene.rx_initial + self.velocity * time
        return jnp.linalg.norm(rx_center - self.scene.tx_reference)

    def initial_state(self, key: PRNGKeyArray) -> ClusterState:
        """Cold-start cluster population at ``t = 0``."""
        return initial_state(
            key,
            scene=self.scene,
            motion=self.motion(0.0),
            params=self.params,
            tables=self.tables,
            wavelength=self.wavelength,
            capacity=self.capacity,
        )

    def step(
        self, state: ClusterState, key: PRNGKeyArray, time: ArrayLike, dt: ArrayLike
    ) -> ClusterState:
        """Evolve ``state`` from ``time`` to ``time + dt``."""
        return evolve_step(
            state,
            key,
            dt=dt,
            scene=self.scene,
            motion=self.motion(time),
            params=self.params,
            tables=self.tables,
            wavelength=self.wavelength,
        )

    def snapshot(
        self,
        state: ClusterState,
        time: ArrayLike,
        *,
        tx_positions: Array | None = None,
        rx_positions: Array | None = None,
    ) -> ChannelSnapshot:
        """Impulse response of ``state`` at ``time``.

        Element positions default to the arrays of the model; passing them
        explicitly evaluates the same clusters at displaced elements.
        """
        if tx_positions is None:
            tx_positions = self.tx_positions()
        if rx_positions is None:
            rx_positions = self.rx_positions(time)
        return _assemble_cir(
            state,
            scene=self.scene,
            tx_positions=tx_positions,
            rx_positions=rx_positions,
            velocity=self.velocity,
            k_factor=self.k_factor(time),
            wavelength=self.wavelength,
            time=time,
        )
