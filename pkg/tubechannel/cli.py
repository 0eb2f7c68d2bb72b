"""Command-line interface: ``tubechannel run | stats | compare | sweep``.

Every command resolves a scenario from ``--preset``, ``--config`` and repeated
``--set key=value`` overrides, simulates the requested realizations and writes
CSV/JSON files to ``--out`` (default ``$TUBECHANNEL_OUT``). Logs and progress
bars go to standard error. Exit codes: 0 on success, 1 for configuration errors
and 2 for any other failure.
"""

import logging
from collections.abc import Callable
from contextlib import contextmanager
from pathlib import Path

import jax.numpy as jnp
import numpy as np
import typer
from rich.console import Console
from rich.logging import RichHandler

from tubechannel.cir import composite_gain
from tubechannel.model import ChannelModel
from tubechannel.scenario import outputs
from tubechannel.scenario.config import (
    ConfigError,
    ConfigValidationError,
    ScenarioConfig,
    dump_config,
    load_config,
)
from tubechannel.scenario.presets import PRESETS
from tubechannel.scenario.runlog import RunLog
from tubechannel.scenario.streams import gain_stream
from tubechannel.simulate import (
    RealizationTrace,
    realization_state,
    simulate_ensemble,
    states_at,
)
from tubechannel.statistics import (
    PdpMatrix,
    acf,
    cluster_count_series,
    empirical_ccdf,
    fcf,
    first_crossing,
    spatial_ccf,
    stationary_interval,
)
from tubechannel.utils import compensated_mean

logger = logging.getLogger("tubechannel")

app = typer.Typer(
    name="tubechannel",
    help="Non-stationary mmWave channel simulator for vacuum tube trains.",
    add_completion=False,
    no_args_is_help=True,
)

_PRESET = typer.Option(
    None, "--preset", help=f"Scenario preset: {', '.join(PRESETS)}."
)
_CONFIG = typer.Option(
    None,
    "--config",
    dir_okay=False,
    help="Configuration document of 'key = value' lines.",
)
_SET = typer.Option(
    None, "--set", help="Override one key, e.g. --set v_kmh=2160. Repeatable."
)
_SEED = typer.Option(None, "--seed", help="Master seed (overrides sim.seed).")
_REALIZATIONS = typer.Option(
    None, "--realizations", help="Number of realizations (overrides sim.realizations)."
)
_JOBS = typer.Option(
    None, "--jobs", min=1, help="Realizations simulated together. Default: all."
)
_OUT = typer.Option(
    Path("tubechannel-out"),
    "--out",
    envvar="TUBECHANNEL_OUT",
    file_okay=False,
    help="Output directory.",
)
_INSTANTS = typer.Option(
    "0", "--instants", help="Comma-separated analysis times in seconds."
)
_RUNLOG = typer.Option(False, "--runlog", help="Also write the per-step runlog.csv.")
_PROGRESS = typer.Option(
    True, "--progress/--no-progress", help="Show progress bars on standard error."
)
_LOG_LEVEL = typer.Option(
    "WARNING", "--log-level", help="Log level (DEBUG, INFO, WARNING, ERROR)."
)


def _configure_logging(level: str):
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


@contextmanager
def _exit_codes():
    """Translate exceptions into the documented exit codes."""
    try:
        yield
    except typer.Exit:
        raise
    except ConfigError as error:
        typer.echo(f"Configuration error: {error}", err=True)
        raise typer.Exit(code=1) from None
    except Exception as error:  # noqa: BLE001
        logger.debug("Run failed", exc_info=True)
        typer.echo(f"Error: {type(error).__name__}: {error}", err=True)
        raise typer.Exit(code=2) from None


def _resolve(
    preset: str | None,
    config_path: Path | None,
    overrides: list[str] | None,
    seed: int | None,
    realizations: int | None,
) -> ScenarioConfig:
    text = ""
    if config_path is not None:
        try:
            text = config_path.read_text(encoding="utf-8")
        except OSError as error:
            raise ConfigError(f"Cannot read {config_path}: {error}") from None
    overrides = list(overrides or [])
    if seed is not None:
        overrides.append(f"sim.seed={seed}")
    if realizations is not None:
        overrides.append(f"sim.realizations={realizations}")
    config = load_config(text, preset=preset, overrides=overrides)
    logger.info("Resolved scenario %s", config.digest)
    return config


def _instant_steps(text: str, config: ScenarioConfig) -> tuple[int, ...]:
    """Parse ``--instants`` into step indices of the simulation grid."""
    steps = []
    for item in filter(None, (part.strip() for part in text.split(","))):
        try:
            seconds = float(item)
        except ValueError:
            raise ConfigValidationError("instants", f"{item!r} is not a time") from None
        step = round(seconds / config.dt)
        if not 0 <= step <= config.sim_steps:
            raise ConfigValidationError(
                "instants", f"{item} s lies outside the simulated horizon"
            )
        if abs(step * config.dt - seconds) > 1e-6 * config.dt:
            raise ConfigValidationError(
                "instants", f"{item} s is not a multiple of sim.step_us"
            )
        steps.append(step)
    if not steps:
        raise ConfigValidationError("instants", "at least one time is required")
    return tuple(sorted(set(steps)))


class _Run:
    """Simulation results of one resolved scenario."""

    def __init__(
        self,
        config: ScenarioConfig,
        instants: tuple[int, ...],
        *,
        jobs: int | None,
        progress: bool,
    ):
        self.config = config
        self.instants = instants
        self.model: ChannelModel = config.build_model()
        self.grid = config.pdp_grid()
        self.trace: RealizationTrace
        self.trace, self.kept = simulate_ensemble(
            self.model,
            config.sim_seed,
            realizations=config.sim_realizations,
            dt=config.dt,
            steps=config.sim_steps,
            instants=instants,
            grid=self.grid,
            jobs=jobs,
            show_progress=progress,
        )

    @property
    def footer(self) -> dict:
        return {"digest": self.config.digest, "seed": self.config.sim_seed}

    def time(self, step: int) -> float:
        return float(np.asarray(self.trace.times)[0, step])

    def lag_grid(self, step: int) -> np.ndarray:
        """Recorded time lags from ``step`` to the end of the run."""
        return self.config.dt * np.arange(self.config.sim_steps - step + 1)

    def _closed_form(self, index: int, curve: Callable) -> np.ndarray:
        curves = [
            curve(realization_state(self.kept, r, index))
            for r in range(self.config.sim_realizations)
        ]
        return compensated_mean(np.stack(curves))

    def correlation(self, kind: str, index: int) -> tuple[np.ndarray, np.ndarray]:
        """Lags and values of ``acf``, ``ccf`` or ``fcf`` at a kept instant.

        The closed form is averaged over realizations; the ensemble estimator
        averages over realizations directly (evolving channel for the ACF,
        frozen clusters for the CCF and FCF).
        """
        step = self.instants[index]
        time = self.time(step)
        model, config = self.model, self.config
        ensemble = config.stats_estimator == "ensemble"
        if ensemble and config.sim_realizations < 2:
            raise ConfigValidationError(
                "stats.estimator", "the ensemble estimator needs sim.realizations >= 2"
            )
        if kind == "acf":
            lags = self.lag_grid(step)
            if ensemble:
                return lags, acf(self.trace, time, lags)
            return lags, self._closed_form(
                index, lambda s: acf(s, time, lags, model=model)
            )
        if kind == "ccf":
            deltas = np.asarray(config.ccf_deltas())
            lags = deltas / model.wavelength
            curve = lambda s: spatial_ccf(s, time, deltas, model=model)  # noqa: E731
        elif kind == "fcf":
            bandwidth = config.stats_bandwidth_mhz * 1e6
            lags = np.linspace(0.0, bandwidth, config.stats_freq_points)
            curve = lambda s: fcf(s, time, lags, model=model)  # noqa: E731
        else:
            raise ValueError(f"Unknown correlation {kind!r}.")
        if ensemble:
            return lags, curve(states_at(self.kept, index))
        return lags, self._closed_form(index, curve)

    def stationary_intervals(self, steps: tuple[int, ...]) -> np.ndarray:
        """Stationary intervals of every realization at every anchor step."""
        intervals, censored = [], 0
        for r in range(self.trace.realizations):
            matrix = self.trace.pdp_matrix(r, self.grid.delay_bins)
            for step in steps:
                if step == self.config.sim_steps:
                    continue
                interval, cut = stationary_interval(
                    matrix, self.time(step), self.config.stats_si_threshold
                )
                intervals.append(interval)
                censored += cut
        if censored:
            logger.warning(
                "%d of %d stationary intervals reached the end of the run; "
                "they are reported as censored lower bounds",
                censored,
                len(intervals),
            )
        return np.asarray(intervals)

    def mean_pdp(self, steps: tuple[int, ...]) -> PdpMatrix:
        power = np.asarray(self.trace.pdp)[:, list(steps)]
        return PdpMatrix(
            times=jnp.asarray([self.time(s) for s in steps]),
            delay_bins=self.grid.delay_bins,
            power=jnp.asarray(compensated_mean(power)),
        )


def _write_snapshots(run: _Run, out: Path):
    config, model = run.config, run.model
    for index, step in enumerate(run.instants):
        time = run.time(step)
        snapshot = model.snapshot(realization_state(run.kept, 0, index), time)
        gain = composite_gain(
            float(model.los_distance(time)),
            model.wavelength,
            model=config.gain_model,
            shadow_sigma_db=config.gain_shadow_sigma_db,
            key=gain_stream(config.sim_seed, step),
        )
        if config.gain_apply:
            snapshot = snapshot.scaled(gain)
        name = "snapshot.json" if len(run.instants) == 1 else f"snapshot_{step}.json"
        document = outputs.snapshot_document(
            snapshot,
            gain=gain,
            meta={
                "config_digest": config.digest,
                "seed": config.sim_seed,
                "realization": 0,
                "step": step,
                "gain_applied": config.gain_apply,
            },
        )
        outputs.write_json(out / name, document)


def _write_config(config: ScenarioConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(config), encoding="utf-8")


@app.command()
def run(
    preset: str | None = _PRESET,
    config: Path | None = _CONFIG,
    overrides: list[str] | None = _SET,
    seed: int | None = _SEED,
    realizations: int | None = _REALIZATIONS,
    jobs: int | None = _JOBS,
    out: Path = _OUT,
    instants: str = _INSTANTS,
    runlog: bool = _RUNLOG,
    progress: bool = _PROGRESS,
    log_level: str = _LOG_LEVEL,
):
    """Simulate realizations; write clusters.csv and one snapshot per instant."""
    _configure_logging(log_level)
    with _exit_codes():
        scenario = _resolve(preset, config, overrides, seed, realizations)
        result = _Run(
            scenario,
            _instant_steps(instants, scenario),
            jobs=jobs,
            progress=progress,
        )
        _write_config(scenario, out)
        outputs.write_clusters(
            out / "clusters.csv", cluster_count_series(result.trace), **result.footer
        )
        _write_snapshots(result, out)
        if runlog:
            logs = [
                RunLog.from_trace(result.trace, r)
                for r in range(result.trace.realizations)
            ]
            outputs.write_runlog(out / "runlog.csv", logs, **result.footer)
        logger.info("Wrote outputs to %s", out)


@app.command()
def stats(
    preset: str | None = _PRESET,
    config: Path | None = _CONFIG,
    overrides: list[str] | None = _SET,
    seed: int | None = _SEED,
    realizations: int | None = _REALIZATIONS,
    jobs: int | None = _JOBS,
    out: Path = _OUT,
    instants: str = _INSTANTS,
    progress: bool = _PROGRESS,
    log_level: str = _LOG_LEVEL,
):
    """Compute acf, ccf, fcf, pdp and si_ccdf tables at the given instants."""
    _configure_logging(log_level)
    with _exit_codes():
        scenario = _resolve(preset, config, overrides, seed, realizations)
        result = _Run(
            scenario,
            _instant_steps(instants, scenario),
            jobs=jobs,
            progress=progress,
        )
        _write_config(scenario, out)
        for kind in outputs.CORRELATION_HEADERS:
            curves = []
            for index, step in enumerate(result.instants):
                lags, values = result.correlation(kind, index)
                curves.append((result.time(step), lags, values))
            outputs.write_correlation(
                out / f"{kind}.csv", kind, curves, **result.footer
            )
        outputs.write_pdp(
            out / "pdp.csv", result.mean_pdp(result.instants), **result.footer
        )
        intervals = result.stationary_intervals(result.instants)
        if intervals.size == 0:
            raise ConfigValidationError(
                "instants", "stationary intervals need an instant before the last step"
            )
        outputs.write_si_ccdf(
            out / "si_ccdf.csv", empirical_ccdf(intervals), **result.footer
        )


def _track_config(config: ScenarioConfig) -> ScenarioConfig:
    """Coarse cluster-count track over ``track.length_m`` in ``track.step_m`` steps."""
    if config.speed == 0:
        raise ConfigValidationError("motion.speed_kmh", "the track needs motion")
    return config.replace(
        **{
            "rx.initial_distance_m": config.track_initial_distance_m,
            "sim.step_us": config.track_step_m / config.speed * 1e6,
            "sim.steps": max(1, round(config.track_length_m / config.track_step_m)),
        }
    )


@app.command()
def compare(
    config: Path | None = _CONFIG,
    overrides: list[str] | None = _SET,
    seed: int | None = _SEED,
    realizations: int | None = _REALIZATIONS,
    jobs: int | None = _JOBS,
    out: Path = _OUT,
    progress: bool = _PROGRESS,
    log_level: str = _LOG_LEVEL,
):
    """Compare cluster counts and stationary intervals across all presets.

    Every preset runs with the same document, overrides and seed.
    """
    _configure_logging(log_level)
    with _exit_codes():
        counts, tracks, ccdfs = {}, {}, {}
        first = None
        for name in PRESETS:
            scenario = _resolve(name, config, overrides, seed, realizations)
            logger.info("Simulating preset %s", name)
            result = _Run(scenario, (), jobs=jobs, progress=progress)
            track = _Run(_track_config(scenario), (), jobs=jobs, progress=progress)
            first = first or (result, track)
            column = f"count_{name}"
            counts[column] = np.asarray(cluster_count_series(result.trace).mean)
            tracks[column] = np.asarray(cluster_count_series(track.trace).mean)
            steps = tuple(range(scenario.sim_steps))
            ccdfs[name] = empirical_ccdf(result.stationary_intervals(steps))
            _write_config(scenario, out / name)

        result, track = first
        footer = result.footer
        series = cluster_count_series(result.trace)
        outputs.write_table(
            out / "clusters_compare.csv",
            "t_s",
            {"distance_m": np.asarray(series.distance), **counts},
            np.asarray(series.times),
            **footer,
        )
        track_series = cluster_count_series(track.trace)
        outputs.write_table(
            out / "clusters_track_compare.csv",
            "distance_m",
            tracks,
            np.asarray(track_series.distance),
            **footer,
        )
        grid = result.config.dt * np.arange(1, result.config.sim_steps + 1)
        outputs.write_table(
            out / "si_ccdf_compare.csv",
            "interval_s",
            {
                f"ccdf_{name}": np.asarray(ccdf(jnp.asarray(grid)))
                for name, ccdf in ccdfs.items()
            },
            grid,
            **footer,
        )


@app.command()
def sweep(
    key: str = typer.Option(
        "motion.speed_kmh", "--key", help="Dotted key (or alias) to vary."
    ),
    values: str = typer.Option(
        "540,1080,2160", "--values", help="Comma-separated values of the key."
    ),
    preset: str | None = _PRESET,
    config: Path | None = _CONFIG,
    overrides: list[str] | None = _SET,
    seed: int | None = _SEED,
    realizations: int | None = _REALIZATIONS,
    jobs: int | None = _JOBS,
    out: Path = _OUT,
    level: float = typer.Option(
        0.5, "--level", help="ACF level whose first crossing is reported."
    ),
    progress: bool = _PROGRESS,
    log_level: str = _LOG_LEVEL,
):
    """Vary one key and report the ACF and stationary intervals at t = 0.

    The footers carry the digest of the unswept scenario; each row of
    ``sweep_si.csv`` carries the digest of its own point.
    """
    _configure_logging(log_level)
    with _exit_codes():
        base = _resolve(preset, config, overrides, seed, realizations)
        items = [v.strip() for v in values.split(",") if v.strip()]
        if not items:
            raise ConfigValidationError(key, "--values lists no values")
        acf_rows, si_rows = [], []
        for item in items:
            scenario = base.replace(**{key: item})
            logger.info("Simulating %s = %s", key, item)
            result = _Run(scenario, (0,), jobs=jobs, progress=progress)
            lags, curve = result.correlation("acf", 0)
            acf_rows.extend(
                (item, lag, value.real, value.imag, abs(value))
                for lag, value in zip(lags, np.asarray(curve, complex), strict=True)
            )
            intervals = result.stationary_intervals((0,))
            si_rows.append(
                (
                    item,
                    float(np.median(intervals)),
                    float(np.mean(intervals)),
                    first_crossing(lags, curve, level),
                    scenario.digest,
                )
            )
        footer = {"digest": base.digest, "seed": base.sim_seed}
        outputs.write_csv(
            out / "sweep_acf.csv",
            ("value", "dt_s", "re", "im", "abs"),
            acf_rows,
            **footer,
        )
        outputs.write_csv(
            out / "sweep_si.csv",
            (
                "value",
                "median_interval_s",
                "mean_interval_s",
                "acf_crossing_s",
                "config_digest",
            ),
            si_rows,
            **footer,
        )
        _write_config(base, out)


if __name__ == "__main__":
    app()
