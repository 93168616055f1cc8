"""
Forward pass with per-layer FFN coefficient capture.

Every FFN is read as a key-value memory: the activated scores of its key
rows are the "coefficients", and the output is the coefficient-weighted sum
of the value rows. Storage is float32; every matmul accumulates in float64.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ConfigurationError, InputError, NumericError
from src.model.config import Activation, ModelConfig, NormKind
from src.model.weights import DTYPE, LayerWeights, ModelWeights

logger = logging.getLogger(__name__)

NORM_EPS = 1e-5


@dataclass
class MacCounter:
    """Counts multiply-accumulates of every matmul the forward pass runs."""
    macs: int = 0

    def add(self, rows: int, inner: int, cols: int) -> None:
        self.macs += int(rows) * int(inner) * int(cols)

    @property
    def flops(self) -> int:
        return 2 * self.macs


@dataclass
class ForwardTrace:
    """Per-layer FFN coefficients ([T x m] each) and next-token logits [T x V]."""
    coefficients: List[np.ndarray]
    logits: np.ndarray
    ffn_inputs: List[np.ndarray] = field(default_factory=list)
    final_hidden: Optional[np.ndarray] = None


# =============================================================================
# Primitives
# =============================================================================

def _linear(x: np.ndarray, w: np.ndarray, counter: Optional[MacCounter]) -> np.ndarray:
    """x [T x in] times w^T for w [out x in]."""
    if counter is not None:
        counter.add(x.shape[0], x.shape[1], w.shape[0])
    return (x.astype(np.float64) @ w.astype(np.float64).T).astype(DTYPE)


def activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    z64 = z.astype(np.float64)
    if activation is Activation.RELU:
        out = np.maximum(z64, 0.0)
    elif activation is Activation.GELU:
        out = 0.5 * z64 * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (z64 + 0.044715 * z64 ** 3)))
    else:
        out = z64 / (1.0 + np.exp(-z64))
    return out.astype(DTYPE)


def normalize(h: np.ndarray, scale: np.ndarray, kind: NormKind) -> np.ndarray:
    h64 = h.astype(np.float64)
    if kind is NormKind.LAYERNORM:
        h64 = h64 - h64.mean(axis=-1, keepdims=True)
    rms = np.sqrt((h64 ** 2).mean(axis=-1, keepdims=True) + NORM_EPS)
    return (h64 / rms * scale.astype(np.float64)).astype(DTYPE)


def _check_finite(array: np.ndarray, what: str, layer: Optional[int]) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values in {what}", layer=layer)


# =============================================================================
# FFN
# =============================================================================

def ffn_forward(
    x: np.ndarray,
    layer_weights: LayerWeights,
    config: ModelConfig,
    counter: Optional[MacCounter] = None,
    layer: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run one FFN block as a key-value memory.

    Args:
        x: Input vector [d] or matrix [T x d].
        layer_weights: Weights of the block.
        config: Model configuration (activation and variant).
        counter: Optional MAC counter.
        layer: Layer index, used in error messages.

    Returns:
        Tuple of (output, coefficients), shaped like ``x`` and [.. x m].
    """
    squeeze = x.ndim == 1
    rows = np.atleast_2d(np.asarray(x, dtype=DTYPE))
    key, value, gate = layer_weights.ffn_key, layer_weights.ffn_value, layer_weights.ffn_gate

    d, m = config.d_model, config.ffn_dim
    if rows.shape[1] != d or key.shape != (m, d) or value.shape != (m, d):
        raise ConfigurationError(
            f"FFN shape mismatch: input {rows.shape}, key {key.shape}, value {value.shape}, "
            f"expected d={d}, m={m}"
        )

    if gate is not None:
        if gate.shape != (m, d):
            raise ConfigurationError(f"FFN gate has shape {gate.shape}, expected {(m, d)}")
        up = _linear(rows, key, counter)
        coeffs = (activate(_linear(rows, gate, counter), config.activation).astype(np.float64)
                  * up.astype(np.float64)).astype(DTYPE)
    else:
        coeffs = activate(_linear(rows, key, counter), config.activation)

    if counter is not None:
        counter.add(coeffs.shape[0], m, d)
    output = (coeffs.astype(np.float64) @ value.astype(np.float64)).astype(DTYPE)

    _check_finite(coeffs, "FFN coefficients", layer)
    _check_finite(output, "FFN output", layer)
    if squeeze:
        return output[0], coeffs[0]
    return output, coeffs


# =============================================================================
# Attention
# =============================================================================

def attention(
    a: np.ndarray,
    layer_weights: LayerWeights,
    config: ModelConfig,
    counter: Optional[MacCounter] = None,
) -> np.ndarray:
    """Causal multi-head self-attention over a [T x d] block."""
    seq_len = a.shape[0]
    heads, head_dim = config.num_heads, config.head_dim

    q = _linear(a, layer_weights.w_q, counter).astype(np.float64)
    k = _linear(a, layer_weights.w_k, counter).astype(np.float64)
    v = _linear(a, layer_weights.w_v, counter).astype(np.float64)

    q = q.reshape(seq_len, heads, head_dim).transpose(1, 0, 2)
    k = k.reshape(seq_len, heads, head_dim).transpose(1, 0, 2)
    v = v.reshape(seq_len, heads, head_dim).transpose(1, 0, 2)

    scores = q @ k.transpose(0, 2, 1) / np.sqrt(head_dim)
    mask = np.triu(np.ones((seq_len, seq_len), dtype=bool), k=1)
    scores = np.where(mask, -np.inf, scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    mixed = probs @ v
    if counter is not None:
        counter.add(heads * seq_len, head_dim, seq_len)
        counter.add(heads * seq_len, seq_len, head_dim)

    mixed = mixed.transpose(1, 0, 2).reshape(seq_len, config.d_model).astype(DTYPE)
    return _linear(mixed, layer_weights.w_o, counter)


# =============================================================================
# Full model
# =============================================================================

def _token_ids(tokens: Union[Sequence[int], object], config: ModelConfig) -> np.ndarray:
    ids = getattr(tokens, "tokens", tokens)
    ids = np.asarray(list(ids), dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("token sequence must be a non-empty 1-D list of ids")
    if ids.size > config.max_seq_len:
        raise InputError(f"sequence length {ids.size} exceeds max_seq_len {config.max_seq_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise InputError(f"token ids must lie in [0, {config.vocab_size}), got {ids.tolist()}")
    return ids


def forward_with_trace(
    tokens,
    weights: ModelWeights,
    config: ModelConfig,
    counter: Optional[MacCounter] = None,
    capture_hidden: bool = False,
) -> ForwardTrace:
    """
    Run the full model on one token sequence.

    ``tokens`` may be a plain id sequence or anything exposing ``.tokens``.
    With ``capture_hidden`` the trace also keeps each layer's normalized FFN
    input and the final residual stream.
    """
    ids = _token_ids(tokens, config)
    seq_len = ids.size

    h = (weights.embedding[ids].astype(np.float64)
         + weights.position[:seq_len].astype(np.float64)).astype(DTYPE)

    coefficients: List[np.ndarray] = []
    ffn_inputs: List[np.ndarray] = []
    for index, layer in enumerate(list(weights.layers)):
        a = normalize(h, layer.attn_norm, config.norm)
        h = (h.astype(np.float64) + attention(a, layer, config, counter)).astype(DTYPE)
        _check_finite(h, "attention output", index)

        u = normalize(h, layer.ffn_norm, config.norm)
        y, coeffs = ffn_forward(u, layer, config, counter, layer=index)
        h = (h.astype(np.float64) + y).astype(DTYPE)
        coefficients.append(coeffs)
        if capture_hidden:
            ffn_inputs.append(u)

    final = normalize(h, weights.final_norm, config.norm)
    logits = _linear(final, weights.unembedding, counter)
    _check_finite(logits, "logits", None)

    return ForwardTrace(
        coefficients=coefficients,
        logits=logits,
        ffn_inputs=ffn_inputs,
        final_hidden=h if capture_hidden else None,
    )


def predict_next(logits_row: np.ndarray) -> int:
    """Greedy next token; ties resolve to the lowest id."""
    return int(np.argmax(logits_row))
