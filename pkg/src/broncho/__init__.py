"""Airway-tree segmentation toolkit: losses, fuzzy attention, metrics, skeletons and patch sampling."""
from .errors import (
    BronchoError,
    CheckFailure,
    DomainError,
    EmptyMaskError,
    FormatError,
    InputError,
    ShapeMismatchError,
)

__version__ = "0.1.0"

__all__ = [
    "BronchoError", "CheckFailure", "DomainError", "EmptyMaskError", "FormatError",
    "InputError", "ShapeMismatchError", "__version__",
]
