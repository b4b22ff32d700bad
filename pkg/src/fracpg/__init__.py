"""Fractional policy gradients with an O(1)-memory fractional TD-error.

Submodules:

* ``frac_math``: Lanczos gamma, zeta, fractional weights, compensated sums
* ``frac_td``: exact, truncated and recursive fractional TD-errors
* ``envs``: CartPole, MountainCarContinuous and Pendulum
* ``policy``: one-hidden-layer policy and value networks with analytic gradients
* ``trainer``: the FPG loop and the REINFORCE, A2C and PPO-lite baselines
* ``bench``: metrics files, statistics and multi-seed suites
* ``config`` and ``cli``: run files, manifests and the ``fracpg`` command
"""

from .config import TOOL_VERSION as __version__
from .frac_math import gamma, gl_weights, rl_kernels, stabilization_constants, zeta
from .frac_td import EtaVariant, FracTdConfig, FracTdState, MuVariant, exact_frac_td, recursive_step
from .trainer import Algo, TrainConfig, default_config, train

__all__ = [
    "__version__",
    "gamma",
    "zeta",
    "gl_weights",
    "rl_kernels",
    "stabilization_constants",
    "MuVariant",
    "EtaVariant",
    "FracTdConfig",
    "FracTdState",
    "exact_frac_td",
    "recursive_step",
    "Algo",
    "TrainConfig",
    "default_config",
    "train",
]
