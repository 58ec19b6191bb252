"""Configuration, recipes and the stage runner behind the command line."""

from .config import ExperimentConfig, apply_override, from_dict, load_config
from .manifest import RunLock, RunManifest, sha256_file
from .recipes import recipe, recipe_ks, recipe_mg
from .stages import STAGE_ORDER, Run, run

__all__ = [
    "ExperimentConfig",
    "Run",
    "RunLock",
    "RunManifest",
    "STAGE_ORDER",
    "apply_override",
    "from_dict",
    "load_config",
    "recipe",
    "recipe_ks",
    "recipe_mg",
    "run",
    "sha256_file",
]
