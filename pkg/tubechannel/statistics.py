"""Correlation functions, power delay profiles and stationary intervals.

Correlation functions come in two flavours. Given a single :class:`ClusterState`
the closed form is used: the clusters are frozen, the elements are displaced and
the taps of the two channels are correlated one by one, treating distinct taps
as uncorrelated. Given a batch of states (leading realization axis) or a
simulation trace, the same quantity is estimated as an average over
realizations. Estimates are divided by the geometric mean of the two zero-lag
energies by default, which keeps them within the unit disc. The ``"anchor"``
normalization divides by the zero-query value at the anchor instead. Either way
the zero query gives exactly one.
"""

from collections.abc import Sequence

import equinox as eqx
import jax
import jax.numpy as jnp
import numpy as np
from jaxtyping import Array, ArrayLike, Float, Int

from tubechannel.evolution import ClusterState
from tubechannel.model import _TUBE_AXIS, ChannelModel
from tubechannel.utils import (
    EmptyEnsembleError,
    check_shapes_match,
    compensated_mean,
)

# Lag grids may be given as arrays or plain sequences of numbers
Grid = ArrayLike | Sequence[float | int]


class CorrelationQuery(eqx.Module):
    """Lags of a space-time-frequency correlation.

    Args:
        time: Anchor time in seconds.
        frequency: Anchor frequency in hertz, relative to the carrier.
        dt: Time lag in seconds.
        df: Frequency lag in hertz.
        delta_tx: Displacement of the second Tx element along the tube axis, meters.
        delta_rx: Displacement of the second Rx element along the tube axis, meters.
    """

    time: float | int = 0.0
    frequency: float | int = 0.0
    dt: float | int = 0.0
    df: float | int = 0.0
    delta_tx: float | int = 0.0
    delta_rx: float | int = 0.0

    def __check_init__(self):
        if self.time < 0:
            raise ValueError("The anchor time must be non-negative.")


def _pair_taps(model, state, time, frequency, dt, df, delta_tx, delta_rx):
    """Tap gains of the anchor pair and of the lagged, displaced pair."""
    tx = model.tx_positions()[:1]
    rx = model.rx_positions(time)[:1]
    first = model.snapshot(state, time, tx_positions=tx, rx_positions=rx)
    second = model.snapshot(
        state,
        time + dt,
        tx_positions=tx + delta_tx * _TUBE_AXIS,
        rx_positions=model.rx_positions(time + dt)[:1] + delta_rx * _TUBE_AXIS,
    )
    a1, d1 = first.tap_arrays()
    a2, d2 = second.tap_arrays()
    h1 = a1[0, 0] * jnp.exp(-2j * jnp.pi * d1[0, 0] * frequency)
    h2 = a2[0, 0] * jnp.exp(-2j * jnp.pi * d2[0, 0] * (frequency + df))
    return h1, h2


@eqx.filter_jit
def _closed_form_terms(model, state, time, frequency, lags):
    def single(dt, df, delta_tx, delta_rx):
        h1, h2 = _pair_taps(model, state, time, frequency, dt, df, delta_tx, delta_rx)
        cross = jnp.sum(h1 * jnp.conj(h2))
        return cross, jnp.sum(jnp.abs(h1) ** 2), jnp.sum(jnp.abs(h2) ** 2)

    return jax.vmap(single)(*lags)


@eqx.filter_jit
def _ensemble_terms(model, states, time, frequency, lags):
    def single(state, dt, df, delta_tx, delta_rx):
        h1, h2 = _pair_taps(model, state, time, frequency, dt, df, delta_tx, delta_rx)
        return jnp.sum(h1), jnp.sum(h2)

    over_lags = jax.vmap(single, in_axes=(None, 0, 0, 0, 0))
    return jax.vmap(over_lags, in_axes=(0, None, None, None, None))(states, *lags)


_NORMALIZATIONS = ("geometric", "anchor")


def _check_normalization(normalization: str):
    if normalization not in _NORMALIZATIONS:
        raise ValueError("normalization must be 'geometric' or 'anchor'.")


def _normalize(cross, energy_1, energy_2, normalization="geometric"):
    if normalization == "anchor":
        denominator = np.asarray(energy_1)
    else:
        denominator = np.sqrt(np.asarray(energy_1) * np.asarray(energy_2))
    safe = np.where(denominator > 0, denominator, 1.0)
    return np.where(denominator > 0, np.asarray(cross) / safe, 1.0 + 0j)


def ensemble_correlation(
    first: ArrayLike, second: ArrayLike, *, normalization: str = "geometric"
) -> np.ndarray:
    """Normalized correlation ``E[H1 H2*] / sqrt(E|H1|² E|H2|²)`` over axis 0.

    Averages use exactly rounded sums, so the result does not depend on how the
    realizations were batched.

    Args:
        first: Channel samples with realizations along axis 0.
        second: Samples of the lagged channel, same shape as ``first``.
        normalization: ``"geometric"`` or ``"anchor"``, as in :func:`stfcf`.
    """
    _check_normalization(normalization)
    first, second = np.asarray(first), np.asarray(second)
    check_shapes_match([first.shape, second.shape])
    if first.shape[0] == 0:
        raise EmptyEnsembleError("The ensemble has no realizations.")
    if first.shape[0] < 2:
        raise ValueError("An ensemble estimate needs at least two realizations.")
    cross = compensated_mean(first * np.conj(second))
    return _normalize(
        cross,
        compensated_mean(np.abs(first) ** 2),
        compensated_mean(np.abs(second) ** 2),
        normalization,
    )


def _state_correlation(
    state: ClusterState,
    model: ChannelModel,
    time: float | int,
    frequency: float | int,
    dts,
    dfs,
    deltas_tx,
    deltas_rx,
    normalization="geometric",
) -> np.ndarray:
    grids = (dts, dfs, deltas_tx, deltas_rx)
    lags = jnp.broadcast_arrays(
        *(jnp.atleast_1d(jnp.asarray(x, float)) for x in grids)
    )
    time, frequency = jnp.asarray(time, float), jnp.asarray(frequency, float)
    if state.alive.ndim == 1:
        terms = _closed_form_terms(model, state, time, frequency, lags)
        return _normalize(*terms, normalization)
    first, second = _ensemble_terms(model, state, time, frequency, lags)
    return ensemble_correlation(first, second, normalization=normalization)


def _trace_correlation(trace, time: float | int, dts: Grid) -> np.ndarray:
    times = np.asarray(trace.times)
    times = times[0] if times.ndim == 2 else times
    transfer = np.asarray(trace.transfer)
    if transfer.ndim == 3:
        raise ValueError("Ensemble estimates need a trace with a realization axis.")
    start = _time_index(times, time)
    stops = [_time_index(times, time + dt) for dt in np.atleast_1d(dts)]
    first = transfer[:, start, 0, 0]
    return np.array(
        [ensemble_correlation(first, transfer[:, stop, 0, 0]) for stop in stops]
    )


def stfcf(
    source,
    query: CorrelationQuery,
    *,
    model: ChannelModel,
    normalization: str = "geometric",
) -> complex:
    """Space-time-frequency correlation of the channel for one query.

    Args:
        source: A :class:`ClusterState` at ``query.time`` for the closed form, or
            the same with a leading realization axis for the ensemble estimate.
        query: Anchor and lags.
        model: The channel model the state belongs to.
        normalization: ``"geometric"`` divides by ``sqrt(E1 E2)``, the zero-lag
            energies of the two channels; ``"anchor"`` divides by ``E1``, the
            value of the zero query at the anchor.
    """
    _check_normalization(normalization)
    value = _state_correlation(
        source,
        model,
        query.time,
        query.frequency,
        query.dt,
        query.df,
        query.delta_tx,
        query.delta_rx,
        normalization,
    )
    return complex(value[0])


def acf(
    source,
    time: float | int,
    dt_grid: Grid,
    *,
    model: ChannelModel | None = None,
    frequency: float | int = 0.0,
) -> np.ndarray:
    """Time autocorrelation ``R(Δt)`` at a fixed antenna pair and frequency.

    ``source`` may also be a batched simulation trace; the estimate then averages
    the recorded anchor-frequency responses, so clusters are born and die over the
    lag, and ``dt_grid`` must fall on the recorded time grid.
    """
    if not isinstance(source, ClusterState):
        if frequency != 0:
            raise ValueError("Traces only record the response at the carrier.")
        return _trace_correlation(source, time, dt_grid)
    if model is None:
        raise ValueError("A model is required to correlate cluster states.")
    return _state_correlation(source, model, time, frequency, dt_grid, 0, 0, 0)


def spatial_ccf(
    source: ClusterState,
    time: float | int,
    delta_grid: Grid,
    *,
    model: ChannelModel,
    side: str = "rx",
    frequency: float | int = 0.0,
) -> np.ndarray:
    """Spatial cross-correlation against the element displacement in meters.

    ``side`` selects which array the second element belongs to.
    """
    if side not in ("rx", "tx"):
        raise ValueError("side must be 'rx' or 'tx'.")
    delta_tx, delta_rx = (delta_grid, 0) if side == "tx" else (0, delta_grid)
    return _state_correlation(
        source, model, time, frequency, 0, 0, delta_tx, delta_rx
    )


def fcf(
    source: ClusterState,
    time: float | int,
    df_grid: Grid,
    *,
    model: ChannelModel,
    frequency: float | int = 0.0,
) -> np.ndarray:
    """Frequency correlation against the frequency lag in hertz."""
    return _state_correlation(source, model, time, frequency, 0, df_grid, 0, 0)


def first_crossing(
    lags: Grid, values: ArrayLike | Sequence[complex | float | int], level: float | int
) -> float:
    """First lag at which ``|values|`` drops below ``level``, or ``nan``."""
    below = np.flatnonzero(np.abs(np.asarray(values)) < level)
    return float(np.asarray(lags)[below[0]]) if below.size else float("nan")


class PdpMatrix(eqx.Module):
    """Power delay profiles on a uniform delay grid, one row per time instant.

    ``delay_bins`` holds the left edge of every bin.
    """

    times: Float[Array, "t"]
    delay_bins: Float[Array, "b"]
    power: Float[Array, "t b"]

    def __check_init__(self):
        if self.delay_bins.shape[0] > 1:
            widths = np.diff(np.asarray(self.delay_bins))
            if not np.allclose(widths, widths[0], rtol=1e-9, atol=0):
                raise ValueError("Delay bins must have uniform width.")
        if np.any(np.asarray(self.power) < 0):
            raise ValueError("PDP powers must be non-negative.")

    @property
    def bin_width(self) -> float:
        bins = np.asarray(self.delay_bins)
        return float(bins[1] - bins[0]) if bins.size > 1 else float("nan")


class PdpGrid(eqx.Module):
    """Delay window on which per-step power delay profiles are recorded.

    Args:
        start: Delay of the left edge of the first bin, seconds.
        bin_width: Bin width in seconds.
        bins: Number of bins.
        include_los: Whether the LoS tap is binned.
    """

    start: float | int = 0.0
    bin_width: float | int = 5e-9
    bins: int = 512
    include_los: bool = False

    def __check_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive.")
        if self.bins < 1:
            raise ValueError("bins must be a positive integer.")

    @property
    def delay_bins(self) -> Array:
        return self.start + self.bin_width * jnp.arange(self.bins)


def _bin_powers(
    delays: Array, powers: Array, start: ArrayLike, bin_width: ArrayLike, bins: int
) -> Array:
    """Sum powers into delay bins, accumulating out-of-window taps in the edge bins."""
    index = jnp.floor((delays - start) / bin_width).astype(int)
    index = jnp.clip(index, 0, bins - 1)
    return jnp.zeros(bins).at[index.ravel()].add(powers.ravel())


def pdp_row(
    snapshot, start: ArrayLike, bin_width: ArrayLike, bins: int, *, include_los: bool
) -> Array:
    """Power delay profile of a snapshot averaged over antenna pairs; jit safe."""
    amplitude, delay = snapshot.tap_arrays(include_los=include_los)
    pairs = amplitude.shape[0] * amplitude.shape[1]
    return _bin_powers(delay, jnp.abs(amplitude) ** 2 / pairs, start, bin_width, bins)


def pdp(
    snapshot,
    bin_width: float | int,
    *,
    start: float | int | None = None,
    bins: int | None = None,
    include_los: bool = True,
) -> PdpMatrix:
    """Power delay profile of one snapshot, averaged over antenna pairs.

    By default the window starts at the bin holding the earliest non-zero tap and
    ends at the bin holding the latest one.

    Returns:
        A :class:`PdpMatrix` with a single row.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive.")
    amplitude, delay = snapshot.tap_arrays(include_los=include_los)
    occupied = np.asarray(delay)[np.abs(np.asarray(amplitude)) > 0]
    if start is None:
        lowest = occupied.min() if occupied.size else 0.0
        start = np.floor(lowest / bin_width) * bin_width
    if bins is None:
        highest = occupied.max() if occupied.size else start
        bins = int(np.floor((highest - start) / bin_width)) + 1
    row = pdp_row(snapshot, start, bin_width, bins, include_los=include_los)
    return PdpMatrix(
        times=jnp.atleast_1d(jnp.asarray(snapshot.time, float)),
        delay_bins=start + bin_width * jnp.arange(bins),
        power=row[None],
    )


def _time_index(times: np.ndarray, time: float) -> int:
    step = np.min(np.diff(times)) if times.size > 1 else 1.0
    index = int(np.argmin(np.abs(times - time)))
    if abs(times[index] - time) > 1e-6 * step:
        raise IndexError(f"Time {time} is not on the recorded grid.")
    return index


def _row_correlation(rows: np.ndarray, anchor: int) -> np.ndarray:
    energies = np.sum(rows**2, axis=-1)
    cross = rows @ rows[anchor]
    denominator = np.maximum(energies, energies[anchor])
    safe = np.where(denominator > 0, denominator, 1.0)
    return np.where(denominator > 0, cross / safe, 1.0)


def pdp_acf(matrix: PdpMatrix, time: float | int, dt: float | int) -> float:
    """Correlation of the PDPs at ``time`` and ``time + dt``.

    The bin-wise inner product divided by the larger of the two energies, so the
    result lies in ``[0, 1]``. Two empty PDPs correlate to one.
    """
    times = np.asarray(matrix.times)
    first, second = _time_index(times, time), _time_index(times, time + dt)
    rows = np.asarray(matrix.power)[[first, second]]
    return float(_row_correlation(rows, 0)[1])


def stationary_interval(
    matrix: PdpMatrix, time: float | int, threshold: float | int = 0.8
) -> tuple[float, bool]:
    """Shortest recorded lag at which the PDP correlation drops to ``threshold``.

    Returns:
        A tuple ``(interval, censored)``. If the correlation never drops to the
        threshold, the interval is the remaining observation window and
        ``censored`` is True.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1].")
    times = np.asarray(matrix.times)
    start = _time_index(times, time)
    rows = np.asarray(matrix.power)[start:]
    correlation = _row_correlation(rows, 0)[1:]
    # Rounding in the inner products must not hide a crossing at the threshold
    crossed = np.flatnonzero(correlation <= threshold * (1 + 1e-12))
    if crossed.size:
        return float(times[start + 1 + crossed[0]] - times[start]), False
    return float(times[-1] - times[start]), True


class ClusterCountSeries(eqx.Module):
    """Cluster counts per step for every realization and their ensemble mean."""

    times: Float[Array, "steps"]
    distance: Float[Array, "steps"]
    counts: Int[Array, "realizations steps"]
    mean: Float[Array, "steps"]


def cluster_count_series(trace) -> ClusterCountSeries:
    """Cluster counts against time and Tx-Rx distance from a simulation trace."""
    counts = np.atleast_2d(np.asarray(trace.count))
    if counts.shape[0] == 0:
        raise EmptyEnsembleError("The trace has no realizations.")
    times = np.asarray(trace.times).reshape(-1, counts.shape[1])[0]
    distance = np.asarray(trace.distance).reshape(-1, counts.shape[1])[0]
    return ClusterCountSeries(
        times=jnp.asarray(times),
        distance=jnp.asarray(distance),
        counts=jnp.asarray(counts),
        mean=jnp.asarray(compensated_mean(counts)),
    )


class CcdfSeries(eqx.Module):
    """Empirical complementary CDF evaluated at the sorted samples."""

    values: Float[Array, "n"]
    ccdf: Float[Array, "n"]

    def __call__(self, x: ArrayLike) -> Array:
        """Fraction of samples strictly greater than ``x``."""
        values = self.values
        above = values.shape[0] - jnp.searchsorted(values, x, side="right")
        return above / values.shape[0]


def empirical_ccdf(samples: Sequence[float] | ArrayLike) -> CcdfSeries:
    """Empirical CCDF of ``samples``.

    Example:
        .. doctest::

            >>> series = empirical_ccdf([1.0, 2.0, 3.0, 4.0])
            >>> float(series(2.0))
            0.5
    """
    values = np.sort(np.asarray(samples, float).ravel())
    if values.size == 0:
        raise EmptyEnsembleError("Cannot build a CCDF from no samples.")
    above = values.size - np.searchsorted(values, values, side="right")
    return CcdfSeries(jnp.asarray(values), jnp.asarray(above / values.size))
