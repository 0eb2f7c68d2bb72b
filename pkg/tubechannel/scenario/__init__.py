"""Scenario configuration, presets, random streams, run logs and output files."""

from .config import (
    ConfigError,
    ConfigParseError,
    ConfigValidationError,
    ScenarioConfig,
    UnknownPresetError,
    dump_config,
    load_config,
)
from .presets import PRESETS, preset_values
from .runlog import RunLog, StepRecord, merge_logs, run_digest
from .streams import rng_streams

__all__ = [
    "PRESETS",
    "ConfigError",
    "ConfigParseError",
    "ConfigValidationError",
    "RunLog",
    "ScenarioConfig",
    "StepRecord",
    "UnknownPresetError",
    "dump_config",
    "load_config",
    "merge_logs",
    "preset_values",
    "rng_streams",
    "run_digest",
]
