"""Discrete harmonic maps from Euclidean domains into NPC targets, with regularity diagnostics."""

__version__ = "0.1.0"

from .errors import *  # noqa: E402,F401,F403
from .targets import *  # noqa: E402,F401,F403
from .grid import *  # noqa: E402,F401,F403
from .energy import *  # noqa: E402,F401,F403
from .solver import *  # noqa: E402,F401,F403
from .regularity import *  # noqa: E402,F401,F403
from .io import *  # noqa: E402,F401,F403
from .config import ExperimentConfig, load_config, parse_config  # noqa: E402,F401
