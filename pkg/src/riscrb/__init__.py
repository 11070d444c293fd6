"""Position error bounds and RIS phase design under electromagnetic interference."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateSceneError,
    RiscrbError,
)
from .scene import SceneConfig, build_scene  # noqa: E402
from .fisher import CrbObjective, crb, fim, rcrb, value_and_gradient  # noqa: E402
from .optimizer import OptimizerConfig, solve  # noqa: E402

__all__ = [
    "ConfigError",
    "CrbObjective",
    "DegenerateSceneError",
    "OptimizerConfig",
    "RiscrbError",
    "SceneConfig",
    "build_scene",
    "crb",
    "fim",
    "rcrb",
    "solve",
    "value_and_gradient",
]
