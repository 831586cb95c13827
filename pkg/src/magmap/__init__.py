"""Curl-free Gaussian-process maps of the ambient magnetic field."""

__version__ = "0.1.0"

from .types import (
    Dataset,
    Domain,
    DomainError,
    FieldPrediction,
    Hyperparameters,
    MagmapError,
    MagneticSample,
    NumericalError,
    OrderingError,
    ParameterError,
    ValidationReport,
    auto_domain,
    validate_dataset,
)
from .basis import BasisIndexSet, build_index_set, build_workspace
from .batch import (
    BatchModel,
    OptimizationError,
    OptimizeOptions,
    fit,
    fit_optimized,
    nlml,
    optimize_hyperparameters,
    predict,
)
from .sequential import SequentialFilter, SequentialState

__all__ = [
    "BasisIndexSet",
    "BatchModel",
    "Dataset",
    "Domain",
    "DomainError",
    "FieldPrediction",
    "Hyperparameters",
    "MagmapError",
    "MagneticSample",
    "NumericalError",
    "OptimizationError",
    "OptimizeOptions",
    "OrderingError",
    "ParameterError",
    "SequentialFilter",
    "SequentialState",
    "ValidationReport",
    "auto_domain",
    "build_index_set",
    "build_workspace",
    "fit",
    "fit_optimized",
    "nlml",
    "optimize_hyperparameters",
    "predict",
    "validate_dataset",
]
