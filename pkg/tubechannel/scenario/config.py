"""Scenario configuration: a flat ``key = value`` document with dotted keys.

Documents are UTF-8 text. Blank lines and everything after ``#`` are ignored;
every other line is ``section.key = value``. A document may select a preset with
``preset = <name>``. Values resolve in the order preset, then document, then
overrides, and the result is validated as a whole.

Human units (km/h, GHz, ns, dB) live only in :class:`ScenarioConfig`;
:meth:`ScenarioConfig.build_model` converts them to SI.

Example:
    .. doctest::

        >>> config = load_config("preset = tube\\nmotion.speed_kmh = 540")
        >>> config.motion_speed_kmh
        540.0
"""

import hashlib
import math
import re
from collections.abc import Callable, Iterable, Mapping
from typing import NamedTuple

import equinox as eqx
import jax.numpy as jnp

from tubechannel.cir import RicianModel
from tubechannel.evolution import EvolutionParams
from tubechannel.geometry import SPEED_OF_LIGHT, TubeScene
from tubechannel.model import ChannelModel
from tubechannel.scenario.presets import preset_values
from tubechannel.statistics import PdpGrid


class ConfigError(ValueError):
    """Base class of every configuration error."""


class ConfigParseError(ConfigError):
    """A line of a configuration document could not be parsed."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ConfigValidationError(ConfigError):
    """A key is unknown, missing, or its value violates a constraint."""

    def __init__(self, key: str, constraint: str, line: int | None = None):
        where = "" if line is None else f"line {line}: "
        super().__init__(f"{where}{key}: {constraint}")
        self.key = key
        self.constraint = constraint
        self.line = line


class UnknownPresetError(ConfigError):
    """The requested preset does not exist."""


class _Key(NamedTuple):
    name: str
    kind: type
    default: object
    check: Callable[[object], bool] | None = None
    constraint: str = ""


_REQUIRED = object()


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


def _choice(*options):
    return lambda x: x in options


_KEYS = (
    _Key("tube.radius_m", float, _REQUIRED, _positive, "must be positive"),
    _Key("tube.roughness_m", float, _REQUIRED, _non_negative, "must be >= 0"),
    _Key("tube.axis_height_m", float, 2.0),
    _Key("tx.x_m", float, 0.0),
    _Key("tx.y_m", float, 0.0),
    _Key("tx.z_m", float, 4.0),
    _Key("rx.initial_distance_m", float, _REQUIRED, _positive, "must be positive"),
    _Key("rx.y_m", float, 0.0),
    _Key("rx.z_m", float, 3.0),
    _Key("carrier.frequency_ghz", float, _REQUIRED, _positive, "must be positive"),
    _Key("array.tx_elements", int, 2, _positive, "must be at least 1"),
    _Key("array.rx_elements", int, 2, _positive, "must be at least 1"),
    _Key("array.spacing_wavelengths", float, 1.0, _positive, "must be positive"),
    _Key("motion.speed_kmh", float, _REQUIRED, _non_negative, "must be >= 0"),
    _Key(
        "motion.direction",
        str,
        "toward",
        _choice("toward", "away"),
        "must be 'toward' or 'away'",
    ),
    _Key("evolution.birth_rate_per_m", float, _REQUIRED, _positive, "must be positive"),
    _Key("evolution.death_rate_per_m", float, _REQUIRED, _positive, "must be positive"),
    _Key(
        "evolution.correlation_distance_m", float, 10.0, _positive, "must be positive"
    ),
    _Key("evolution.delay_relaxation_m", float, 0.1, _positive, "must be positive"),
    _Key("evolution.rho_s0", float, 1.0, lambda x: 0 < x <= 1, "must lie in (0, 1]"),
    _Key("evolution.k_tx", float, 6.0, _positive, "must be positive"),
    _Key("evolution.k_rx", float, 6.0, _positive, "must be positive"),
    _Key("evolution.mean_rays", float, 8.0, _positive, "must be positive"),
    _Key("evolution.max_rays", int, 24, _positive, "must be at least 1"),
    _Key("evolution.max_clusters", int, 128, _positive, "must be at least 1"),
    _Key("evolution.mean_virtual_delay_ns", float, 30.0, _positive, "must be positive"),
    _Key("evolution.mean_intra_delay_ns", float, 5.0, _positive, "must be positive"),
    _Key("evolution.intra_power_decay", float, 2.3, lambda x: x > 1, "must be > 1"),
    _Key("evolution.ray_shadow_db", float, 0.0, _non_negative, "must be >= 0"),
    _Key("evolution.waveguide", bool, True),
    _Key("evolution.birth_scale", float, 1.0, _positive, "must be positive"),
    _Key("rician.k_db", float, 6.0),
    _Key("rician.slope_db_per_m", float, 0.0),
    _Key(
        "gain.model",
        str,
        "free-space",
        _choice("free-space", "unity"),
        "must be 'free-space' or 'unity'",
    ),
    _Key("gain.shadow_sigma_db", float, 0.0, _non_negative, "must be >= 0"),
    _Key("gain.apply", bool, False),
    _Key("sim.step_us", float, 10.0, _positive, "must be positive"),
    _Key("sim.steps", int, 100, _positive, "must be at least 1"),
    _Key("sim.realizations", int, 1, _positive, "must be at least 1"),
    _Key("sim.seed", int, 0, _non_negative, "must be >= 0"),
    _Key("stats.freq_points", int, 512, lambda x: x >= 2, "must be at least 2"),
    _Key("stats.bandwidth_mhz", float, 400.0, _positive, "must be positive"),
    _Key("stats.delay_bin_ns", float, 5.0, _positive, "must be positive"),
    _Key("stats.delay_bins", int, 512, _positive, "must be at least 1"),
    _Key("stats.delay_start_ns", float, 0.0, _non_negative, "must be >= 0"),
    _Key("stats.si_threshold", float, 0.8, lambda x: 0 < x <= 1, "must lie in (0, 1]"),
    _Key("stats.si_include_los", bool, False),
    _Key("stats.ccf_points", int, 61, lambda x: x >= 2, "must be at least 2"),
    _Key("stats.ccf_max_wavelengths", float, 3.0, _positive, "must be positive"),
    _Key(
        "stats.estimator",
        str,
        "closed-form",
        _choice("closed-form", "ensemble"),
        "must be 'closed-form' or 'ensemble'",
    ),
    _Key("track.initial_distance_m", float, 1000.0, _positive, "must be positive"),
    _Key("track.length_m", float, 900.0, _positive, "must be positive"),
    _Key("track.step_m", float, 5.0, _positive, "must be positive"),
)

KEYS: dict[str, _Key] = {key.name: key for key in _KEYS}

ALIASES = {
    "v_kmh": "motion.speed_kmh",
    "fc_ghz": "carrier.frequency_ghz",
    "sigma_h": "tube.roughness_m",
    "r_b": "evolution.birth_rate_per_m",
    "r_d": "evolution.death_rate_per_m",
    "d0_m": "rx.initial_distance_m",
    "k_db": "rician.k_db",
}

_KEY_PATTERN = re.compile(r"[a-z_][a-z0-9_]*(\.[a-z0-9_]+)*")
_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


def _attribute(name: str) -> str:
    return name.replace(".", "_")


class ScenarioConfig(eqx.Module):
    """Every parameter of a scenario, one field per dotted key.

    Field names are the dotted keys with dots replaced by underscores, e.g.
    ``tube.radius_m`` is ``tube_radius_m``. Construct through :func:`load_config`;
    the constructor validates every constraint.
    """

    tube_radius_m: float
    tube_roughness_m: float
    tube_axis_height_m: float
    tx_x_m: float
    tx_y_m: float
    tx_z_m: float
    rx_initial_distance_m: float
    rx_y_m: float
    rx_z_m: float
    carrier_frequency_ghz: float
    array_tx_elements: int
    array_rx_elements: int
    array_spacing_wavelengths: float
    motion_speed_kmh: float
    motion_direction: str
    evolution_birth_rate_per_m: float
    evolution_death_rate_per_m: float
    evolution_correlation_distance_m: float
    evolution_delay_relaxation_m: float
    evolution_rho_s0: float
    evolution_k_tx: float
    evolution_k_rx: float
    evolution_mean_rays: float
    evolution_max_rays: int
    evolution_max_clusters: int
    evolution_mean_virtual_delay_ns: float
    evolution_mean_intra_delay_ns: float
    evolution_intra_power_decay: float
    evolution_ray_shadow_db: float
    evolution_waveguide: bool
    evolution_birth_scale: float
    rician_k_db: float
    rician_slope_db_per_m: float
    gain_model: str
    gain_shadow_sigma_db: float
    gain_apply: bool
    sim_step_us: float
    sim_steps: int
    sim_realizations: int
    sim_seed: int
    stats_freq_points: int
    stats_bandwidth_mhz: float
    stats_delay_bin_ns: float
    stats_delay_bins: int
    stats_delay_start_ns: float
    stats_si_threshold: float
    stats_si_include_los: bool
    stats_ccf_points: int
    stats_ccf_max_wavelengths: float
    stats_estimator: str
    track_initial_distance_m: float
    track_length_m: float
    track_step_m: float

    def __check_init__(self):
        for key in _KEYS:
            value = getattr(self, _attribute(key.name))
            if key.check is not None and not key.check(value):
                raise ConfigValidationError(key.name, key.constraint)
        radius, height = self.tube_radius_m, self.tube_axis_height_m
        for name, y, z in (
            ("tx", self.tx_y_m, self.tx_z_m),
            ("rx", self.rx_y_m, self.rx_z_m),
        ):
            if y**2 + (z - height) ** 2 > radius**2 * (1 + 1e-12):
                raise ConfigValidationError(f"{name}.z_m", "must lie inside the tube")

    def get(self, name: str):
        """Value of a dotted key (or alias)."""
        return getattr(self, _attribute(ALIASES.get(name, name)))

    def items(self) -> Iterable[tuple[str, object]]:
        """Dotted keys and values, in documentation order."""
        return ((key.name, getattr(self, _attribute(key.name))) for key in _KEYS)

    def replace(self, **values) -> "ScenarioConfig":
        """Copy with some dotted keys (or aliases) changed, then validated."""
        resolved = dict(self.items())
        for name, value in values.items():
            name = ALIASES.get(name, name)
            if name not in KEYS:
                raise ConfigValidationError(name, "unknown key")
            resolved[name] = _coerce(KEYS[name], value)
        return _build(resolved)

    @property
    def carrier_frequency(self) -> float:
        return self.carrier_frequency_ghz * 1e9

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def speed(self) -> float:
        """Train speed in m/s."""
        return self.motion_speed_kmh / 3.6

    @property
    def dt(self) -> float:
        """Simulation step in seconds."""
        return self.sim_step_us * 1e-6

    @property
    def delay_relaxation(self) -> float:
        """Relaxation time of the virtual delays in seconds; infinite at rest."""
        if self.speed == 0:
            return math.inf
        return self.evolution_delay_relaxation_m / self.speed

    @property
    def digest(self) -> str:
        """Short hash of the resolved configuration."""
        return hashlib.sha256(dump_config(self).encode("utf-8")).hexdigest()[:16]

    def frequencies(self) -> jnp.ndarray:
        """Baseband frequency grid centred on the carrier, in hertz."""
        half = self.stats_bandwidth_mhz * 1e6 / 2
        return jnp.linspace(-half, half, self.stats_freq_points)

    def ccf_deltas(self) -> jnp.ndarray:
        """Element displacements of the spatial correlation, in meters."""
        top = self.stats_ccf_max_wavelengths * self.wavelength
        return jnp.linspace(0.0, top, self.stats_ccf_points)

    def pdp_grid(self) -> PdpGrid:
        return PdpGrid(
            start=self.stats_delay_start_ns * 1e-9,
            bin_width=self.stats_delay_bin_ns * 1e-9,
            bins=self.stats_delay_bins,
            include_los=self.stats_si_include_los,
        )

    def evolution_params(self) -> EvolutionParams:
        return EvolutionParams(
            birth_rate=self.evolution_birth_rate_per_m,
            death_rate=self.evolution_death_rate_per_m,
            correlation_distance=self.evolution_correlation_distance_m,
            delay_relaxation=self.delay_relaxation,
            roughness=self.tube_roughness_m,
            rho_s0=self.evolution_rho_s0,
            von_mises_k_tx=self.evolution_k_tx,
            von_mises_k_rx=self.evolution_k_rx,
            mean_rays_per_cluster=self.evolution_mean_rays,
            mean_virtual_delay=self.evolution_mean_virtual_delay_ns * 1e-9,
            mean_intra_delay=self.evolution_mean_intra_delay_ns * 1e-9,
            intra_power_decay=self.evolution_intra_power_decay,
            per_ray_shadow_sigma=self.evolution_ray_shadow_db,
            waveguide_factor=self.evolution_waveguide,
            birth_scale=self.evolution_birth_scale,
        )

    def build_model(self) -> ChannelModel:
        """The channel model in SI units.

        The Rx starts ``rx.initial_distance_m`` ahead of the Tx along ``+x`` and
        moves along the tube axis, toward the Tx by default.
        """
        sign = -1.0 if self.motion_direction == "toward" else 1.0
        scene = TubeScene(
            radius=self.tube_radius_m,
            axis_height=self.tube_axis_height_m,
            tx_reference=jnp.array([self.tx_x_m, self.tx_y_m, self.tx_z_m]),
            rx_initial=jnp.array(
                [self.tx_x_m + self.rx_initial_distance_m, self.rx_y_m, self.rx_z_m]
            ),
        )
        return ChannelModel(
            scene,
            jnp.array([sign * self.speed, 0.0, 0.0]),
            self.carrier_frequency,
            self.evolution_params(),
            RicianModel.from_db(self.rician_k_db, self.rician_slope_db_per_m),
            tx_elements=self.array_tx_elements,
            rx_elements=self.array_rx_elements,
            spacing_wavelengths=self.array_spacing_wavelengths,
            capacity=self.evolution_max_clusters,
            max_rays=self.evolution_max_rays,
        )


def _coerce(key: _Key, value, line: int | None = None):
    """Convert a document string (or a typed value) to the type of ``key``."""
    if not isinstance(value, str):
        if key.kind is bool and not isinstance(value, bool):
            raise ConfigValidationError(key.name, "expected true or false", line)
        return key.kind(value)
    text = value.strip()
    try:
        if key.kind is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        return key.kind(text)
    except ValueError:
        expected = {bool: "true or false", int: "an integer", float: "a number"}
        raise ConfigValidationError(
            key.name, f"expected {expected.get(key.kind, 'text')}, got {text!r}", line
        ) from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_document(text: str) -> tuple[str | None, dict[str, tuple[str, int]]]:
    """Split a document into its preset name and ``key -> (raw value, line)``.

    Aliases are resolved and unknown or repeated keys are rejected, but values
    are not converted.
    """
    preset = None
    entries: dict[str, tuple[str, int]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            raise ConfigParseError("expected 'key = value'", number, len(line) + 1)
        key_text, value = line.split("=", 1)
        key = key_text.strip()
        column = len(key_text) - len(key_text.lstrip()) + 1
        if not key or not _KEY_PATTERN.fullmatch(key):
            raise ConfigParseError(f"invalid key {key!r}", number, column)
        if not value.strip():
            raise ConfigParseError(f"missing value for {key}", number, len(line) + 1)
        if key == "preset":
            preset = value.strip()
            continue
        key = ALIASES.get(key, key)
        if key not in KEYS:
            raise ConfigValidationError(key, "unknown key", number)
        if key in entries:
            raise ConfigParseError(f"duplicate key {key}", number, column)
        entries[key] = (value.strip(), number)
    return preset, entries


def _parse_overrides(
    overrides: Mapping[str, object] | Iterable[str],
) -> dict[str, object]:
    if isinstance(overrides, Mapping):
        pairs = overrides.items()
    else:
        pairs = []
        for item in overrides:
            if "=" not in item:
                raise ConfigValidationError(item, "overrides must look like key=value")
            name, value = item.split("=", 1)
            pairs.append((name.strip(), value.strip()))
    resolved = {}
    for name, value in pairs:
        name = ALIASES.get(name, name)
        if name not in KEYS:
            raise ConfigValidationError(name, "unknown key")
        resolved[name] = value
    return resolved


def _build(values: Mapping[str, object]) -> ScenarioConfig:
    missing = [name for name, key in KEYS.items() if values.get(name) is _REQUIRED]
    if missing:
        raise ConfigValidationError(
            ", ".join(missing), "required keys are missing (or select a preset)"
        )
    return ScenarioConfig(**{_attribute(name): value for name, value in values.items()})


def load_config(
    text: str = "",
    *,
    preset: str | None = None,
    overrides: Mapping[str, object] | Iterable[str] = (),
) -> ScenarioConfig:
    """Parse, merge and validate a scenario.

    Args:
        text: Configuration document.
        preset: Preset name. Takes precedence over a ``preset`` line in ``text``.
        overrides: ``key=value`` strings or a mapping applied after the document.

    Raises:
        ConfigParseError: A line is malformed.
        ConfigValidationError: A key is unknown, missing or out of range.
        UnknownPresetError: The preset does not exist.
    """
    document_preset, entries = parse_document(text)
    preset = preset if preset is not None else document_preset

    values = {name: key.default for name, key in KEYS.items()}
    if preset is not None:
        for name, value in preset_values(preset).items():
            values[name] = _coerce(KEYS[name], value)
    for name, (value, line) in entries.items():
        values[name] = _coerce(KEYS[name], value, line)
    for name, value in _parse_overrides(overrides).items():
        values[name] = _coerce(KEYS[name], value)
    return _build(values)


def dump_config(config: ScenarioConfig) -> str:
    """Serialize every key of ``config`` so that :func:`load_config` restores it."""
    return "".join(f"{name} = {_format(value)}\n" for name, value in config.items())
