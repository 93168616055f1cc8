"""
Knowledge coefficient extraction.

For every layer, the knowledge coefficient of an FFN slot is the mean
magnitude of that slot's activation over the selected (example, position)
pairs. Pairs are weighted equally across a dataset (pooled mean).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from src.errors import CompatibilityError, InputError, VersionError
from src.model.config import ModelConfig
from src.model.forward import MacCounter, forward_with_trace
from src.model.weights import ModelWeights
from src.coefficients.dataset import TokenExample, dataset_hash

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-8


class CoefficientMode(str, Enum):
    """How raw activations become nonnegative coefficients."""
    ABS = "abs"  # mean of |c|
    CLAMP = "clamp"  # max(mean of c, eps)


class CoefficientSource(str, Enum):
    FORGET = "forget"
    RETAIN = "retain"


def parse_enum(enum_cls, value, what: str):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(str(value).lower())
    except ValueError:
        raise VersionError(f"Unknown {what} tag: {value!r}")


@dataclass
class KnowledgeCoefficients:
    """Per-layer coefficient vectors, shape [num_layers x m]."""
    per_layer: np.ndarray
    token_count: int
    source: CoefficientSource
    mode: CoefficientMode = CoefficientMode.ABS
    ans_only: bool = True
    dataset_hash: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.source = parse_enum(CoefficientSource, self.source, "coefficient source")
        self.mode = parse_enum(CoefficientMode, self.mode, "coefficient mode")
        self.per_layer = np.ascontiguousarray(self.per_layer, dtype=np.float32)
        if self.per_layer.ndim != 2:
            raise InputError(f"per_layer must be 2-D [layers x m], got shape {self.per_layer.shape}")
        if not np.all(np.isfinite(self.per_layer)) or np.any(self.per_layer < 0):
            raise InputError("knowledge coefficients must be finite and nonnegative")
        if self.token_count < 1:
            raise InputError(f"token_count must be positive, got {self.token_count}")

    @property
    def num_layers(self) -> int:
        return self.per_layer.shape[0]

    @property
    def ffn_dim(self) -> int:
        return self.per_layer.shape[1]

    def check_compatible(self, config: ModelConfig) -> None:
        """Raise CompatibilityError unless the shape matches ``config``."""
        if (self.num_layers, self.ffn_dim) != (config.num_layers, config.ffn_dim):
            raise CompatibilityError(
                f"{self.source.value} coefficients are {self.num_layers}x{self.ffn_dim}, "
                f"model is {config.num_layers}x{config.ffn_dim}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_layers": self.num_layers,
            "ffn_dim": self.ffn_dim,
            "token_count": self.token_count,
            "source": self.source.value,
            "mode": self.mode.value,
            "ans_only": self.ans_only,
            "dataset_hash": self.dataset_hash,
            "seed": self.seed,
        }


@dataclass
class CoefficientAccumulator:
    """Associative (sum, count) pair; merge order fixes the float result."""
    sums: np.ndarray
    count: int = 0
    mode: CoefficientMode = CoefficientMode.ABS

    @classmethod
    def empty(cls, config: ModelConfig, mode: CoefficientMode = CoefficientMode.ABS) -> "CoefficientAccumulator":
        return cls(sums=np.zeros((config.num_layers, config.ffn_dim), dtype=np.float64), mode=mode)

    def add_rows(self, layer_rows: Sequence[np.ndarray]) -> None:
        """Add selected coefficient rows, one [P x m] block per layer."""
        for layer, rows in enumerate(layer_rows):
            values = rows.astype(np.float64)
            if self.mode is CoefficientMode.ABS:
                values = np.abs(values)
            self.sums[layer] += values.sum(axis=0)
        self.count += int(layer_rows[0].shape[0]) if layer_rows else 0

    def merge(self, other: "CoefficientAccumulator") -> "CoefficientAccumulator":
        self.sums += other.sums
        self.count += other.count
        return self

    def finalize(self, source: CoefficientSource, ans_only: bool, eps: float = DEFAULT_EPS,
                 dataset_digest: Optional[str] = None, seed: Optional[int] = None) -> KnowledgeCoefficients:
        if self.count == 0:
            raise InputError("no positions were accumulated")
        mean = self.sums / self.count
        if self.mode is CoefficientMode.CLAMP:
            mean = np.maximum(mean, eps)
        return KnowledgeCoefficients(
            per_layer=mean.astype(np.float32),
            token_count=self.count,
            source=source,
            mode=self.mode,
            ans_only=ans_only,
            dataset_hash=dataset_digest,
            seed=seed,
        )


def _example_accumulator(
    example: TokenExample,
    weights: ModelWeights,
    config: ModelConfig,
    ans_only: bool,
    mode: CoefficientMode,
    counter: Optional[MacCounter],
) -> CoefficientAccumulator:
    example.validate(config)
    positions = example.selected_positions(ans_only)
    trace = forward_with_trace(example, weights, config, counter=counter)
    accumulator = CoefficientAccumulator.empty(config, mode)
    accumulator.add_rows([coeffs[positions] for coeffs in trace.coefficients])
    return accumulator


def extract_coefficients(
    example: TokenExample,
    weights: ModelWeights,
    config: ModelConfig,
    ans_only: bool = True,
    mode: CoefficientMode = CoefficientMode.ABS,
    source: CoefficientSource = CoefficientSource.FORGET,
    counter: Optional[MacCounter] = None,
) -> KnowledgeCoefficients:
    """
    Coefficients of a single example.

    Raises:
        EmptySelectionError: ``ans_only`` is set and the example has no answer tokens.
    """
    mode = parse_enum(CoefficientMode, mode, "coefficient mode")
    accumulator = _example_accumulator(example, weights, config, ans_only, mode, counter)
    return accumulator.finalize(source, ans_only)


def accumulate(
    dataset: Sequence[TokenExample],
    weights: ModelWeights,
    config: ModelConfig,
    ans_only: bool = True,
    mode: CoefficientMode = CoefficientMode.ABS,
    source: CoefficientSource = CoefficientSource.RETAIN,
    workers: int = 1,
    show_progress: bool = False,
    counter: Optional[MacCounter] = None,
    seed: Optional[int] = None,
) -> KnowledgeCoefficients:
    """
    Pooled coefficients over a whole dataset.

    Per-example partial sums are merged in dataset order, so the result does
    not depend on ``workers``.

    Args:
        dataset: Examples to run.
        weights: Model weights (read only).
        config: Model configuration.
        ans_only: Select answer positions only.
        mode: Magnitude or clamped raw mean.
        source: Tag recorded on the result.
        workers: Thread count for per-example forward passes.
        show_progress: Show a tqdm bar.
        counter: Optional MAC counter (forces sequential execution).
        seed: Seed recorded on the result.

    Returns:
        KnowledgeCoefficients tagged with ``source``.
    """
    source = parse_enum(CoefficientSource, source, "coefficient source")
    mode = parse_enum(CoefficientMode, mode, "coefficient mode")
    if not dataset:
        raise InputError(f"cannot accumulate {source.value} coefficients over an empty dataset")

    def run(example: TokenExample) -> CoefficientAccumulator:
        return _example_accumulator(example, weights, config, ans_only, mode, counter)

    if workers > 1 and counter is None:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials: List[CoefficientAccumulator] = list(
                tqdm(pool.map(run, dataset), total=len(dataset), disable=not show_progress,
                     desc=f"{source.value} coefficients")
            )
    else:
        partials = [run(example) for example in tqdm(dataset, disable=not show_progress,
                                                     desc=f"{source.value} coefficients")]

    total = CoefficientAccumulator.empty(config, mode)
    for partial in partials:
        total.merge(partial)

    result = total.finalize(source, ans_only, dataset_digest=dataset_hash(dataset), seed=seed)
    logger.debug(f"Accumulated {result.source.value} coefficients over {result.token_count} positions")
    return result
