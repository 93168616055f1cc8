"""
Progressive Knowledge Vector Weakening.

For each forget batch, in file order:
    1. forward the batch on the current (already edited) weights
    2. extract forget coefficients at the selected positions
    3. contrast them with the frozen retain coefficients
    4. scale the value rows of layers [start_layer, end_layer] by the gate
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.errors import ConfigurationError
from src.model.config import ModelConfig
from src.model.forward import MacCounter
from src.model.weights import ModelWeights
from src.coefficients.dataset import TokenExample, dataset_hash
from src.coefficients.extract import (
    CoefficientMode,
    CoefficientSource,
    KnowledgeCoefficients,
    accumulate,
    parse_enum,
)
from src.kvw.accessor import DEFAULT_EPS, compute_fka, gate, retain_substitute
from src.kvw.weakening import apply_weakening, check_layer_range

logger = logging.getLogger(__name__)


@dataclass
class KvwConfig:
    """Weakening strength, layer range and extraction switches."""
    gamma: float
    start_layer: int = 0
    end_layer: Optional[int] = None  # None = last layer
    eps: float = DEFAULT_EPS
    ans_only: bool = True
    use_retain: bool = True
    batch_size: int = 1
    mode: CoefficientMode = CoefficientMode.ABS

    def __post_init__(self):
        self.mode = parse_enum(CoefficientMode, self.mode, "coefficient mode")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ConfigurationError(f"gamma must be finite and non-negative, got {self.gamma}")
        if self.eps <= 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be at least 1, got {self.batch_size}")

    def layer_range(self, num_layers: int) -> Tuple[int, int]:
        end = num_layers - 1 if self.end_layer is None else self.end_layer
        check_layer_range(self.start_layer, end, num_layers)
        return self.start_layer, end

    def replace(self, **changes) -> "KvwConfig":
        data = asdict(self)
        data.update(changes)
        return KvwConfig(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["mode"] = self.mode.value
        return data


@dataclass
class BatchSummary:
    index: int
    first_example: int
    size: int
    token_count: int
    mean_accessor: float
    mean_gate: float
    min_gate: float
    rows_weakened: Dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "first_example": self.first_example,
            "size": self.size,
            "token_count": self.token_count,
            "mean_A": self.mean_accessor,
            "mean_gate": self.mean_gate,
            "min_gate": self.min_gate,
            "rows_weakened": {str(layer): count for layer, count in sorted(self.rows_weakened.items())},
        }


@dataclass
class UnlearnReport:
    """Run record of one call to :func:`kvw_unlearn`."""
    config: Dict[str, Any]
    batch_size: int
    batches: List[BatchSummary] = field(default_factory=list)
    order_hash: str = ""
    input_fingerprint: str = ""
    output_fingerprint: str = ""
    identity_run: bool = False
    retain_source: str = "precomputed"
    output_model: Optional[str] = None
    seed: Optional[int] = None

    @property
    def batch_count(self) -> int:
        return len(self.batches)

    @property
    def rows_weakened(self) -> int:
        return sum(sum(batch.rows_weakened.values()) for batch in self.batches)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "batch_size": self.batch_size,
            "batch_count": self.batch_count,
            "batches": [batch.to_dict() for batch in self.batches],
            "order_hash": self.order_hash,
            "input_fingerprint": self.input_fingerprint,
            "output_fingerprint": self.output_fingerprint,
            "identity_run": self.identity_run,
            "retain_source": self.retain_source,
            "rows_weakened": self.rows_weakened,
            "output_model": self.output_model,
            "seed": self.seed,
        }

    def to_json(self, filepath: str) -> None:
        """Save the report as JSON (sorted keys, no timestamps)."""
        path = Path(filepath)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        logger.info(f"Run report saved to {filepath}")


def iter_batches(dataset: Sequence[TokenExample], batch_size: int):
    for start in range(0, len(dataset), batch_size):
        yield start, list(dataset[start:start + batch_size])


def order_hash(dataset: Sequence[TokenExample], batch_size: int) -> str:
    digest = hashlib.sha256(dataset_hash(dataset).encode("utf-8"))
    digest.update(f"batch_size={batch_size}".encode("utf-8"))
    return digest.hexdigest()


def kvw_unlearn(
    weights: ModelWeights,
    forget: Sequence[TokenExample],
    retain_coeffs: Optional[KnowledgeCoefficients],
    cfg: KvwConfig,
    config: ModelConfig,
    *,
    inplace: bool = False,
    workers: int = 1,
    show_progress: bool = False,
    counter: Optional[MacCounter] = None,
    seed: Optional[int] = None,
) -> Tuple[ModelWeights, UnlearnReport]:
    """
    Run progressive weakening over ``forget``.

    Args:
        weights: Model to edit. Cloned first unless ``inplace`` is set.
        forget: Forget examples, processed in order in batches of ``cfg.batch_size``.
        retain_coeffs: Precomputed retain coefficients; ignored when
            ``cfg.use_retain`` is false.
        cfg: Weakening configuration.
        config: Model configuration.
        inplace: Edit ``weights`` directly.
        workers: Threads for per-example forward passes within a batch.
        show_progress: Show a tqdm bar over batches.
        counter: Optional MAC counter covering every forward pass.
        seed: Seed recorded in the report.

    Returns:
        Tuple of (edited weights, run report).
    """
    start_layer, end_layer = cfg.layer_range(config.num_layers)
    if cfg.use_retain:
        if retain_coeffs is None:
            raise ConfigurationError("retain coefficients are required unless use_retain is disabled")
        retain_coeffs.check_compatible(config)
        if retain_coeffs.ans_only != cfg.ans_only or retain_coeffs.mode is not cfg.mode:
            logger.warning(
                f"retain coefficients were extracted with ans_only={retain_coeffs.ans_only}, "
                f"mode={retain_coeffs.mode.value}; run uses ans_only={cfg.ans_only}, mode={cfg.mode.value}"
            )

    model = weights if inplace else weights.copy()
    report = UnlearnReport(
        config=cfg.to_dict(),
        batch_size=cfg.batch_size,
        order_hash=order_hash(forget, cfg.batch_size),
        input_fingerprint=model.fingerprint(),
        retain_source="precomputed" if cfg.use_retain else "forget_layer_mean",
        seed=seed,
    )

    if not forget or cfg.gamma == 0:
        if not forget:
            logger.warning("Forget set is empty; nothing to unlearn")
        report.identity_run = True
        report.output_fingerprint = report.input_fingerprint
        return model, report

    batches = list(iter_batches(forget, cfg.batch_size))
    for index, (first, batch) in enumerate(tqdm(batches, disable=not show_progress, desc="KVW batches")):
        c_f = accumulate(
            batch, model, config,
            ans_only=cfg.ans_only,
            mode=cfg.mode,
            source=CoefficientSource.FORGET,
            workers=workers,
            counter=counter,
        )
        c_r = retain_coeffs if cfg.use_retain else retain_substitute(c_f)
        accessor = compute_fka(c_f, c_r, cfg.eps)
        gates = gate(accessor, cfg.gamma)
        summary = apply_weakening(model, gates, start_layer, end_layer)

        in_range = slice(start_layer, end_layer + 1)
        report.batches.append(BatchSummary(
            index=index,
            first_example=first,
            size=len(batch),
            token_count=c_f.token_count,
            mean_accessor=float(accessor.per_layer[in_range].mean()),
            mean_gate=summary.mean_gate,
            min_gate=summary.min_gate,
            rows_weakened={layer.layer: layer.rows_weakened for layer in summary.layers},
        ))
        logger.info(
            f"Batch {index + 1}/{len(batches)}: {summary.rows_weakened} rows weakened, "
            f"min gate {summary.min_gate:.4f}"
        )

    report.output_fingerprint = model.fingerprint()
    return model, report
