"""tubechannel - Non-stationary mmWave channel simulation for vacuum tube trains."""

from importlib.metadata import version

import jax

# Carrier phases reach ~1e6 radians, so single precision is not enough.
jax.config.update("jax_enable_x64", True)

__version__ = version("tubechannel")
__all__ = []
