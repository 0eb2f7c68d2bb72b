"""Named scenarios.

A preset maps dotted configuration keys to values; anything it leaves out keeps
its default. ``open-hst-approx`` is not a faithful open-air model: it removes the
waveguide factor and triples the birth rate, approximating the denser cluster
population of an open high-speed train link.
"""

from types import MappingProxyType

_TUBE = {
    "tube.radius_m": 2.0,
    "tube.roughness_m": 0.0,
    "carrier.frequency_ghz": 58.0,
    "motion.speed_kmh": 1080.0,
    "rx.initial_distance_m": 600.0,
    "evolution.birth_rate_per_m": 80.0,
    "evolution.death_rate_per_m": 4.0,
}

PRESETS = MappingProxyType(
    {
        "tube": MappingProxyType(_TUBE),
        "tunnel": MappingProxyType(_TUBE | {"tube.roughness_m": 0.002}),
        "open-hst-approx": MappingProxyType(
            _TUBE | {"evolution.waveguide": False, "evolution.birth_scale": 3.0}
        ),
    },
)


def preset_values(name: str):
    """Values of the preset ``name``.

    Raises:
        UnknownPresetError: No preset has that name.
    """
    try:
        return PRESETS[name]
    except KeyError:
        from tubechannel.scenario.config import UnknownPresetError

        known = ", ".join(sorted(PRESETS))
        raise UnknownPresetError(
            f"Unknown preset {name!r}; known presets are {known}."
        ) from None
