"""Strong-field magnetic dynamics, drift actions and Landau-level eigenvalue counts."""

__version__ = "0.1.0"

from .errors import ConfigError, MagdriftError
from .model import ModelSpec, from_expressions
from .catalog import CATALOG, build

__all__ = ["CATALOG", "ConfigError", "MagdriftError", "ModelSpec", "build", "from_expressions"]
