"""
Knowledge coefficient extraction, accumulation and caching.
"""
from .cache import load_coeffs, save_coeffs
from .dataset import TokenExample, dataset_hash, load_dataset, save_dataset
from .extract import (
    CoefficientAccumulator,
    CoefficientMode,
    CoefficientSource,
    KnowledgeCoefficients,
    accumulate,
    extract_coefficients,
)

__all__ = [
    "load_coeffs",
    "save_coeffs",
    "TokenExample",
    "dataset_hash",
    "load_dataset",
    "save_dataset",
    "CoefficientAccumulator",
    "CoefficientMode",
    "CoefficientSource",
    "KnowledgeCoefficients",
    "accumulate",
    "extract_coefficients",
]
