"""
Forget Knowledge Accessor and the exponential gate.

    A = max(0, ln(max(C_f, eps) / max(C_r, eps)))
    g = exp(-gamma * A)
"""
import logging
from dataclasses import dataclass

import numpy as np

from src.errors import CompatibilityError, InputError
from src.coefficients.extract import CoefficientSource, KnowledgeCoefficients

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-8


@dataclass
class ForgetKnowledgeAccessor:
    """Nonnegative per-slot relevance to the forget set, [num_layers x m]."""
    per_layer: np.ndarray
    floored_rows: int = 0

    @property
    def num_layers(self) -> int:
        return self.per_layer.shape[0]


@dataclass
class GateVector:
    """Per-slot scale factors in (0, 1], [num_layers x m]."""
    per_layer: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.per_layer.shape[0]


def compute_fka(
    c_f: KnowledgeCoefficients,
    c_r: KnowledgeCoefficients,
    eps: float = DEFAULT_EPS,
) -> ForgetKnowledgeAccessor:
    """
    Log-ratio of forget to retain coefficients, clamped at zero.

    Both sides are floored at ``eps`` so that a slot silent on both sets
    gets A = 0.
    """
    if eps <= 0:
        raise InputError(f"eps must be positive, got {eps}")
    if c_f.per_layer.shape != c_r.per_layer.shape:
        raise CompatibilityError(
            f"forget coefficients {c_f.per_layer.shape} do not match retain coefficients {c_r.per_layer.shape}"
        )
    forget = np.maximum(c_f.per_layer.astype(np.float64), eps)
    retain = np.maximum(c_r.per_layer.astype(np.float64), eps)
    accessor = np.maximum(0.0, np.log(forget / retain))

    floored = int(np.count_nonzero((c_f.per_layer < eps) | (c_r.per_layer < eps)))
    if floored > c_f.per_layer.size // 2:
        logger.warning(f"eps floor applied to {floored} of {c_f.per_layer.size} coefficient entries")
    return ForgetKnowledgeAccessor(per_layer=accessor, floored_rows=floored)


def gate(a: ForgetKnowledgeAccessor, gamma: float) -> GateVector:
    """exp(-gamma * A); identically 1 when gamma is 0."""
    if gamma < 0 or not np.isfinite(gamma):
        raise InputError(f"gamma must be a finite non-negative number, got {gamma}")
    if np.any(a.per_layer < 0):
        raise InputError("accessor values must be non-negative")
    return GateVector(per_layer=np.exp(-float(gamma) * a.per_layer))


def retain_substitute(c_f: KnowledgeCoefficients) -> KnowledgeCoefficients:
    """
    Stand-in retain profile for runs without a retain set: every slot gets
    its layer's mean forget coefficient, so A measures above-average use.
    """
    means = c_f.per_layer.astype(np.float64).mean(axis=1, keepdims=True)
    return KnowledgeCoefficients(
        per_layer=np.broadcast_to(means, c_f.per_layer.shape).astype(np.float32),
        token_count=c_f.token_count,
        source=CoefficientSource.RETAIN,
        mode=c_f.mode,
        ans_only=c_f.ans_only,
        dataset_hash=c_f.dataset_hash,
        seed=c_f.seed,
    )
