"""Decomposed soft actor-critic: component value heads, CAGrad, influence analysis."""

from .envs import GapWalker, LineLander, make_env
from .sacd import DecomposedCritic, Variant, VariantConfig
from .shaping import ComponentSpec, ConstraintMode, Schedule, Sign

__version__ = "0.1.0"

__all__ = [
    "ComponentSpec",
    "ConstraintMode",
    "DecomposedCritic",
    "GapWalker",
    "LineLander",
    "Schedule",
    "Sign",
    "Variant",
    "VariantConfig",
    "make_env",
]
