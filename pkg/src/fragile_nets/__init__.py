"""Mean-field particle systems with default cascades on typed networks.

Modules: ``core`` (types, config, I/O), ``maxplus`` (tropical algebra),
``static_eq`` (static credit equilibrium), ``pde`` (Fokker-Planck solver),
``dynamic`` (Picard fixed point), ``particles`` (Monte Carlo with cascades),
``fragility`` (Perron-Frobenius classifier) and ``cli``.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DensitySpec, DriftVolSpec, Grid, InteractionFn, ParticleSpec, RunConfig, Tolerances, TypedNetwork,
    config_from_dict, g_eval, g_prime, load_config,
)
from .errors import *  # noqa: E402,F401,F403

__all__ = [
    "DensitySpec", "DriftVolSpec", "Grid", "InteractionFn", "ParticleSpec", "RunConfig", "Tolerances",
    "TypedNetwork", "config_from_dict", "g_eval", "g_prime", "load_config", "__version__",
]
