"""Morphable face reflectance: BRDF, SH shading, OLAT inverse rendering,
PCA reflectance and lighting models, and model finetuning by fitting."""
from .brdf import BrdfConfig, ReflectanceMaps, ReflectanceTexel
from .errors import (DomainError, DimensionError, FormatError,
                     InsufficientObservationsError, OptimizationError, ReflmmError)
from .sh import EnvMap, ShVector

__version__ = "0.1.0"

__all__ = ["BrdfConfig", "ReflectanceMaps", "ReflectanceTexel", "EnvMap", "ShVector",
           "ReflmmError", "DomainError", "DimensionError", "FormatError",
           "InsufficientObservationsError", "OptimizationError"]
