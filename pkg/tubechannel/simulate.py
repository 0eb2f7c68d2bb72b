"""Simulation of channel realizations over a time horizon.

A realization starts from a cold-start cluster population at ``t = 0`` and is
advanced with :func:`jax.lax.scan`, recording the quantities the statistics and
output writers need at every step. Realizations are batched with
``eqx.filter_vmap``; each one draws from its own random stream, so results do not
depend on the batch size.
"""

import logging
import warnings

import equinox as eqx
import jax
import jax.numpy as jnp
import jax.random as jr
import numpy as np
from jax import lax
from jaxtyping import Array, Complex, Float, Int, PRNGKeyArray
from tqdm import tqdm

from tubechannel.cir import transfer_function
from tubechannel.evolution import ClusterState
from tubechannel.model import ChannelModel
from tubechannel.scenario.streams import rng_streams
from tubechannel.statistics import PdpGrid, PdpMatrix, pdp_row

logger = logging.getLogger(__name__)


class RealizationTrace(eqx.Module):
    """Per-step records of one or more realizations.

    Every field has a leading realization axis when produced by
    :func:`simulate_ensemble`. ``transfer`` is the response of every antenna pair
    at the carrier frequency. Dead cluster slots have id ``-1``.
    """

    times: Float[Array, "*batch steps"]
    distance: Float[Array, "*batch steps"]
    count: Int[Array, "*batch steps"]
    transfer: Complex[Array, "*batch steps p q"]
    pdp: Float[Array, "*batch steps bins"]
    cluster_ids: Int[Array, "*batch steps c"]
    cluster_delay: Float[Array, "*batch steps c"]
    cluster_power: Float[Array, "*batch steps c"]
    overflow: Int[Array, "*batch"]

    @property
    def realizations(self) -> int:
        return self.count.shape[0] if self.count.ndim == 2 else 1

    def pdp_matrix(self, realization: int, delay_bins: Array) -> PdpMatrix:
        """Recorded PDPs of one realization."""
        if self.count.ndim == 1:
            if realization != 0:
                raise IndexError("The trace holds a single realization.")
            return PdpMatrix(jnp.asarray(self.times), delay_bins, jnp.asarray(self.pdp))
        return PdpMatrix(
            jnp.asarray(self.times[realization]),
            delay_bins,
            jnp.asarray(self.pdp[realization]),
        )


def _record(model: ChannelModel, state: ClusterState, time, grid: PdpGrid) -> dict:
    snapshot = model.snapshot(state, time)
    ray_power = jnp.where(state.ray_mask, state.ray_power, 0.0)
    return {
        "times": jnp.asarray(time, float),
        "distance": model.los_distance(time),
        "count": state.count,
        "transfer": transfer_function(snapshot, 0.0)[..., 0],
        "pdp": pdp_row(
            snapshot,
            grid.start,
            grid.bin_width,
            grid.bins,
            include_los=grid.include_los,
        ),
        "cluster_ids": jnp.where(state.alive, state.ids, -1),
        "cluster_delay": jnp.where(state.alive, state.delay, 0.0),
        "cluster_power": jnp.where(state.alive, ray_power.sum(axis=-1), 0.0),
    }


def _realization(
    model: ChannelModel,
    key: PRNGKeyArray,
    *,
    dt: float,
    steps: int,
    instants: tuple[int, ...],
    grid: PdpGrid,
) -> tuple[RealizationTrace, ClusterState | None]:
    init_key, steps_key = jr.split(key)
    state = model.initial_state(init_key)

    def body(state, index):
        state = model.step(state, jr.fold_in(steps_key, index), (index - 1) * dt, dt)
        return state, _record(model, state, index * dt, grid)

    records = [jax.tree.map(lambda x: x[None], _record(model, state, 0.0, grid))]
    kept = []
    previous = 0
    for stop in sorted(set(instants) | {steps}):
        if stop > previous:
            state, segment = lax.scan(body, state, jnp.arange(previous + 1, stop + 1))
            records.append(segment)
            previous = stop
        if stop in instants:
            kept.append(state)

    records = jax.tree.map(lambda *x: jnp.concatenate(x), *records)
    trace = RealizationTrace(**records, overflow=state.overflow)
    states = jax.tree.map(lambda *x: jnp.stack(x), *kept) if kept else None
    return trace, states


def simulate_realization(
    model: ChannelModel,
    key: PRNGKeyArray,
    *,
    dt: float | int,
    steps: int,
    instants: tuple[int, ...] = (),
    grid: PdpGrid | None = None,
) -> tuple[RealizationTrace, ClusterState | None]:
    """Simulate one realization for ``steps`` steps of ``dt`` seconds.

    Args:
        model: The channel model.
        key: Jax random key of the realization.
        dt: Step length in seconds.
        steps: Number of steps after ``t = 0``.
        instants: Step indices at which the cluster state is kept.
        grid: Delay window of the recorded PDPs. Defaults to ``PdpGrid()``.

    Returns:
        The trace with ``steps + 1`` records, and the states at ``instants``
        stacked along a leading axis (``None`` when no instants are requested).
    """
    instants = _check_horizon(dt, steps, instants)
    grid = PdpGrid() if grid is None else grid
    run = eqx.filter_jit(_realization)
    return run(model, key, dt=float(dt), steps=steps, instants=instants, grid=grid)


def _check_horizon(dt, steps: int, instants) -> tuple[int, ...]:
    if not dt > 0:
        raise ValueError("dt must be positive.")
    if steps < 1:
        raise ValueError("steps must be a positive integer.")
    instants = tuple(sorted({int(i) for i in instants}))
    if any(i < 0 or i > steps for i in instants):
        raise ValueError(f"Instants must be step indices in [0, {steps}].")
    return instants


@eqx.filter_jit
def _run_batch(model, keys, dt, steps, instants, grid):
    def single(key):
        return _realization(
            model, key, dt=dt, steps=steps, instants=instants, grid=grid
        )

    return eqx.filter_vmap(single)(keys)


def simulate_ensemble(
    model: ChannelModel,
    seed: int,
    *,
    realizations: int,
    dt: float | int,
    steps: int,
    instants: tuple[int, ...] = (),
    grid: PdpGrid | None = None,
    jobs: int | None = None,
    first_index: int = 0,
    show_progress: bool = True,
) -> tuple[RealizationTrace, ClusterState | None]:
    """Simulate independent realizations, ``jobs`` of them per vectorized batch.

    Realization ``i`` uses the stream ``rng_streams(seed, first_index + i)``.

    Args:
        model: The channel model.
        seed: Master seed.
        realizations: Number of realizations.
        dt: Step length in seconds.
        steps: Number of steps after ``t = 0``.
        instants: Step indices at which the cluster states are kept.
        grid: Delay window of the recorded PDPs. Defaults to ``PdpGrid()``.
        jobs: Realizations evaluated together. Defaults to all of them.
        first_index: Stream index of the first realization.
        show_progress: Whether to show a progress bar. Defaults to True.

    Returns:
        The trace and the kept states, both with a leading realization axis and
        converted to numpy arrays.
    """
    if realizations < 1:
        raise ValueError("realizations must be a positive integer.")
    if jobs is not None and jobs < 1:
        raise ValueError("jobs must be a positive integer.")
    instants = _check_horizon(dt, steps, instants)
    grid = PdpGrid() if grid is None else grid
    batch = realizations if jobs is None else min(jobs, realizations)

    logger.info(
        "Simulating %d realizations of %d steps in batches of %d",
        realizations,
        steps,
        batch,
    )
    traces, states = [], []
    starts = tqdm(
        range(0, realizations, batch), disable=not show_progress, unit="batch"
    )
    for start in starts:
        stop = min(start + batch, realizations)
        keys = jnp.stack(
            [rng_streams(seed, first_index + i) for i in range(start, stop)]
        )
        trace, kept = _run_batch(model, keys, float(dt), steps, instants, grid)
        traces.append(jax.tree.map(np.asarray, trace))
        states.append(None if kept is None else jax.tree.map(np.asarray, kept))

    trace = jax.tree.map(lambda *x: np.concatenate(x), *traces)
    kept = None if states[0] is None else jax.tree.map(
        lambda *x: np.concatenate(x), *states
    )

    overflowed = int(np.sum(trace.overflow > 0))
    if overflowed:
        warnings.warn(
            f"{overflowed} realizations dropped births because all "
            f"{model.capacity} cluster slots were taken; consider a larger "
            "evolution.max_clusters.",
            stacklevel=2,
        )
    return trace, kept


def states_at(kept: ClusterState, instant: int) -> ClusterState:
    """States of every realization at the ``instant``-th kept instant."""
    return jax.tree.map(lambda x: jnp.asarray(x[:, instant]), kept)


def realization_state(kept: ClusterState, realization: int, instant: int):
    """State of one realization at the ``instant``-th kept instant."""
    return jax.tree.map(lambda x: jnp.asarray(x[realization, instant]), kept)
