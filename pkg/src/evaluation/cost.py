"""
Analytic cost model.

Forward FLOPs are 2x the multiply-accumulates of every matmul in one
forward pass and match :class:`src.model.forward.MacCounter` exactly.
Training methods are expressed as counts of trained passes (forward plus
backward) and frozen reference forwards per batch.
"""
import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict

from src.errors import InputError
from src.model.config import ModelConfig

logger = logging.getLogger(__name__)

ADAM_MOMENTS = 2


class Method(Enum):
    KVW = "kvw"
    GA = "ga"
    GD = "gd"
    KL = "kl"
    NPO = "npo"
    MMU = "mmu"
    ORACLE_RETRAIN = "oracle_retrain"
    LORA_VARIANT = "lora_variant"


# method -> (trained passes, reference forwards) per forget batch
PASSES = {
    Method.GA: (1, 0),
    Method.GD: (2, 0),
    Method.KL: (2, 1),
    Method.NPO: (1, 1),
    Method.LORA_VARIANT: (1, 0),
}

_TAG = re.compile(r"^(?P<name>[a-z_]+?)(?:\((?P<rank>\d+)\))?(?P<full>[-_]full)?$")


@dataclass(frozen=True)
class MethodSpec:
    """A method tag plus its training knobs."""
    method: Method
    rank: int = 8
    full: bool = False
    epochs: int = 1

    @classmethod
    def parse(cls, tag: str, rank: int = 8, epochs: int = 1) -> "MethodSpec":
        """
        Parse tags such as ``kvw``, ``gd``, ``gd_full``, ``lora_variant(4)``.

        Raises:
            InputError: Unknown method tag.
        """
        match = _TAG.match(tag.strip().lower())
        if not match:
            raise InputError(f"Unknown method tag: {tag!r}")
        try:
            method = Method(match.group("name"))
        except ValueError:
            raise InputError(f"Unknown method tag: {tag!r}")
        if match.group("rank"):
            rank = int(match.group("rank"))
        full = bool(match.group("full"))
        if full and method not in (Method.GA, Method.GD, Method.KL, Method.NPO):
            raise InputError(f"Method {method.value} has no full-parameter counterpart")
        return cls(method=method, rank=rank, full=full, epochs=epochs)

    @property
    def tag(self) -> str:
        if self.method is Method.LORA_VARIANT:
            return f"lora_variant({self.rank})"
        return self.method.value + ("_full" if self.full else "")

    @property
    def uses_lora(self) -> bool:
        return self.method in PASSES and not self.full


@dataclass(frozen=True)
class DatasetSizes:
    forget: int
    retain: int
    seq_len: int
    batch_size: int = 1

    def __post_init__(self):
        for name in ("forget", "retain", "seq_len", "batch_size"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def forget_batches(self) -> int:
        return math.ceil(self.forget / self.batch_size)

    @property
    def retain_batches(self) -> int:
        return math.ceil(self.retain / self.batch_size)


@dataclass
class CostReport:
    method: str
    per_batch_flops: int
    backward_flops_per_batch: int
    total_flops: int
    peak_memory_words: int
    breakdown: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "per_batch_flops": self.per_batch_flops,
            "backward_flops_per_batch": self.backward_flops_per_batch,
            "total_flops": self.total_flops,
            "peak_memory_words": self.peak_memory_words,
            "breakdown": dict(sorted(self.breakdown.items())),
        }


# =============================================================================
# Forward counts
# =============================================================================

def ffn_macs_per_layer(config: ModelConfig, seq_len: int) -> int:
    projections = 3 if config.gated else 2
    return projections * seq_len * config.d_model * config.ffn_dim


def forward_macs(config: ModelConfig, seq_len: int) -> int:
    """MACs of one forward pass over a sequence of ``seq_len`` tokens."""
    d, t = config.d_model, seq_len
    per_layer = 4 * t * d * d + 2 * t * t * d + ffn_macs_per_layer(config, t)
    return config.num_layers * per_layer + t * d * config.vocab_size


def forward_flops(config: ModelConfig, seq_len: int) -> int:
    return 2 * forward_macs(config, seq_len)


def ffn_flops(config: ModelConfig, seq_len: int = 1) -> int:
    """FLOPs of one FFN block (single layer)."""
    return 2 * ffn_macs_per_layer(config, seq_len)


def adapter_params(config: ModelConfig, rank: int) -> int:
    """LoRA parameters on q, k, v, o and every FFN projection."""
    d, m = config.d_model, config.ffn_dim
    projections = 3 if config.gated else 2
    return config.num_layers * rank * (4 * (d + d) + projections * (d + m))


def adapter_macs(config: ModelConfig, seq_len: int, rank: int) -> int:
    return seq_len * adapter_params(config, rank)


def edit_flops(config: ModelConfig) -> int:
    """Gate evaluation plus row scaling over every FFN value row."""
    return config.num_layers * config.ffn_dim * (config.d_model + 2)


def check_rank(config: ModelConfig, rank: int) -> None:
    limit = min(config.d_model, config.ffn_dim) // 8
    if not 1 <= rank <= limit:
        raise InputError(f"LoRA rank must lie in [1, {limit}] for this model, got {rank}")


# =============================================================================
# Memory
# =============================================================================

def _parameter_words(config: ModelConfig) -> int:
    d, m, v = config.d_model, config.ffn_dim, config.vocab_size
    projections = 3 if config.gated else 2
    per_layer = 2 * d + 4 * d * d + projections * m * d
    return config.num_layers * per_layer + 2 * v * d + config.max_seq_len * d + d


def _layer_activation_words(config: ModelConfig, sizes: DatasetSizes) -> int:
    t, d = sizes.seq_len, config.d_model
    projections = 3 if config.gated else 2
    return sizes.batch_size * (t * (6 * d + projections * config.ffn_dim) + config.num_heads * t * t)


def _logit_words(config: ModelConfig, sizes: DatasetSizes) -> int:
    return sizes.batch_size * sizes.seq_len * config.vocab_size


# =============================================================================
# Accounting
# =============================================================================

def flop_account(config: ModelConfig, sizes: DatasetSizes, method: MethodSpec) -> CostReport:
    """
    FLOP totals and peak memory (in words) of one method on one model.

    Per-batch costs with F = forward FLOPs of one batch and
    Fa = adapter forward FLOPs of one batch:
        kvw                 F + L*m*(d+2)
        LoRA trained pass   2F + 3Fa
        full trained pass   3F
        mmu                 two full trained passes plus a saliency pass,
                            plus one full trained pass per retain batch
        oracle              one full trained pass per retain batch

    Orderings between methods compare per-batch FLOPs; totals also
    depend on set sizes and epochs.

    Raises:
        InputError: Invalid rank, epochs or method.
    """
    if isinstance(method, str):
        method = MethodSpec.parse(method)
    if method.epochs < 1:
        raise InputError(f"epochs must be positive, got {method.epochs}")

    f_batch = sizes.batch_size * forward_flops(config, sizes.seq_len)
    params = _parameter_words(config)
    stored = config.num_layers * _layer_activation_words(config, sizes) + _logit_words(config, sizes)
    breakdown: Dict[str, int] = {"forward_flops_per_batch": f_batch, "parameters": params}

    if method.method is Method.KVW:
        edit = edit_flops(config)
        per_example = forward_flops(config, sizes.seq_len)
        total = (sizes.retain + sizes.forget) * per_example + sizes.forget_batches * edit
        coeff_words = 4 * config.num_layers * config.ffn_dim
        peak = params + _layer_activation_words(config, sizes) + _logit_words(config, sizes) + coeff_words
        breakdown.update({"edit_flops_per_batch": edit, "gradient_words": 0, "optimizer_words": 0,
                          "activation_words": peak - params - coeff_words, "coefficient_words": coeff_words})
        return CostReport(method.tag, f_batch + edit, 0, total, peak, breakdown)

    full_pass = 3 * f_batch
    full_backward = 2 * f_batch

    if method.method is Method.MMU:
        per_batch = 3 * full_pass
        # saliency-masked descent on every retain batch each epoch
        retain_side = sizes.retain_batches * full_pass
        total = method.epochs * (sizes.forget_batches * per_batch + retain_side)
        gradients, optimizer = params, ADAM_MOMENTS * params
        peak = params + gradients + optimizer + params + stored  # + saliency map
        breakdown.update({"gradient_words": gradients, "optimizer_words": optimizer, "saliency_words": params})
        return CostReport(method.tag, per_batch, 3 * full_backward, total, peak, breakdown)

    if method.method is Method.ORACLE_RETRAIN:
        total = method.epochs * sizes.retain_batches * full_pass
        gradients, optimizer = params, ADAM_MOMENTS * params
        breakdown.update({"gradient_words": gradients, "optimizer_words": optimizer})
        return CostReport(method.tag, full_pass, full_backward, total,
                          params + gradients + optimizer + stored, breakdown)

    trained, reference = PASSES[method.method]
    if method.full:
        pass_flops, backward = full_pass, full_backward
        trainable = params
        reference_words = params if reference else 0
    else:
        check_rank(config, method.rank)
        fa_batch = sizes.batch_size * 2 * adapter_macs(config, sizes.seq_len, method.rank)
        pass_flops = 2 * f_batch + 3 * fa_batch
        backward = f_batch + 2 * fa_batch
        trainable = adapter_params(config, method.rank)
        reference_words = 0  # the frozen base doubles as the reference model
        breakdown["adapter_flops_per_batch"] = fa_batch
        breakdown["adapter_words"] = trainable

    per_batch = trained * pass_flops + reference * f_batch
    total = method.epochs * sizes.forget_batches * per_batch
    gradients, optimizer = trainable, ADAM_MOMENTS * trainable
    extra = trainable if not method.full else 0
    peak = params + extra + gradients + optimizer + reference_words + stored
    breakdown.update({"gradient_words": gradients, "optimizer_words": optimizer,
                      "reference_words": reference_words, "activation_words": stored})
    return CostReport(method.tag, per_batch, trained * backward, total, peak, breakdown)
