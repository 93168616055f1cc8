"""
Weight containers.

Every matrix follows the [out x in] convention, so a row of ``ffn_key`` is
the key of one FFN memory slot and the matching row of ``ffn_value`` is the
vector that slot writes into the residual stream.
"""
import hashlib
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.errors import ConfigurationError, InputError, NumericError
from src.model.config import ModelConfig

DTYPE = np.float32


@dataclass
class LayerWeights:
    """Parameters of one transformer block."""
    attn_norm: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ffn_norm: np.ndarray
    ffn_key: np.ndarray
    ffn_value: np.ndarray
    ffn_gate: Optional[np.ndarray] = None

    def named(self) -> Dict[str, np.ndarray]:
        tensors = {
            "attn_norm": self.attn_norm,
            "q": self.w_q,
            "k": self.w_k,
            "v": self.w_v,
            "o": self.w_o,
            "ffn_norm": self.ffn_norm,
            "ffn_key": self.ffn_key,
        }
        if self.ffn_gate is not None:
            tensors["ffn_gate"] = self.ffn_gate
        tensors["ffn_value"] = self.ffn_value
        return tensors

    def expected_shapes(self, config: ModelConfig) -> Dict[str, tuple]:
        d, m = config.d_model, config.ffn_dim
        shapes = {
            "attn_norm": (d,), "q": (d, d), "k": (d, d), "v": (d, d), "o": (d, d),
            "ffn_norm": (d,), "ffn_key": (m, d), "ffn_value": (m, d),
        }
        if config.gated:
            shapes["ffn_gate"] = (m, d)
        return shapes

    def copy(self) -> "LayerWeights":
        return LayerWeights(
            attn_norm=self.attn_norm.copy(),
            w_q=self.w_q.copy(),
            w_k=self.w_k.copy(),
            w_v=self.w_v.copy(),
            w_o=self.w_o.copy(),
            ffn_norm=self.ffn_norm.copy(),
            ffn_key=self.ffn_key.copy(),
            ffn_value=self.ffn_value.copy(),
            ffn_gate=None if self.ffn_gate is None else self.ffn_gate.copy(),
        )


@dataclass
class ModelWeights:
    """
    All parameters of a model.

    Edits swap whole per-layer arrays while holding ``lock``; a forward pass
    reads each array reference once, so it never sees a half-edited layer.
    """
    embedding: np.ndarray
    position: np.ndarray
    layers: List[LayerWeights]
    final_norm: np.ndarray
    unembedding: np.ndarray
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    # =========================================================================
    # Naming
    # =========================================================================

    def named_tensors(self) -> Dict[str, np.ndarray]:
        """Flat, ordered mapping of tensor name to array."""
        tensors: Dict[str, np.ndarray] = {
            "embedding": self.embedding,
            "position": self.position,
        }
        for index, layer in enumerate(self.layers):
            for name, array in layer.named().items():
                tensors[f"layers.{index}.{name}"] = array
        tensors["final_norm"] = self.final_norm
        tensors["unembedding"] = self.unembedding
        return tensors

    @classmethod
    def from_named(cls, tensors: Dict[str, np.ndarray], config: ModelConfig) -> "ModelWeights":
        def take(name: str) -> np.ndarray:
            if name not in tensors:
                raise ConfigurationError(f"Missing tensor '{name}'")
            return np.ascontiguousarray(tensors[name], dtype=DTYPE)

        layers = []
        for index in range(config.num_layers):
            prefix = f"layers.{index}."
            layers.append(LayerWeights(
                attn_norm=take(prefix + "attn_norm"),
                w_q=take(prefix + "q"),
                w_k=take(prefix + "k"),
                w_v=take(prefix + "v"),
                w_o=take(prefix + "o"),
                ffn_norm=take(prefix + "ffn_norm"),
                ffn_key=take(prefix + "ffn_key"),
                ffn_value=take(prefix + "ffn_value"),
                ffn_gate=take(prefix + "ffn_gate") if config.gated else None,
            ))
        weights = cls(
            embedding=take("embedding"),
            position=take("position"),
            layers=layers,
            final_norm=take("final_norm"),
            unembedding=take("unembedding"),
        )
        weights.validate(config)
        return weights

    # =========================================================================
    # Checks and copies
    # =========================================================================

    def validate(self, config: ModelConfig) -> None:
        """Raise ConfigurationError if any tensor has the wrong shape."""
        d, v = config.d_model, config.vocab_size
        top = {
            "embedding": (self.embedding, (v, d)),
            "position": (self.position, (config.max_seq_len, d)),
            "final_norm": (self.final_norm, (d,)),
            "unembedding": (self.unembedding, (v, d)),
        }
        for name, (array, shape) in top.items():
            if array.shape != shape:
                raise ConfigurationError(f"Tensor '{name}' has shape {array.shape}, expected {shape}")

        if len(self.layers) != config.num_layers:
            raise ConfigurationError(
                f"Model has {len(self.layers)} layers, config declares {config.num_layers}"
            )
        for index, layer in enumerate(self.layers):
            if config.gated and layer.ffn_gate is None:
                raise ConfigurationError(f"Layer {index} is missing ffn_gate for a gated FFN")
            if not config.gated and layer.ffn_gate is not None:
                raise ConfigurationError(f"Layer {index} has ffn_gate but the FFN is plain")
            named = layer.named()
            for name, shape in layer.expected_shapes(config).items():
                if named[name].shape != shape:
                    raise ConfigurationError(
                        f"Tensor 'layers.{index}.{name}' has shape {named[name].shape}, expected {shape}"
                    )

    def check_finite(self) -> None:
        """Raise NumericError naming the first tensor with NaN or Inf."""
        for name, array in self.named_tensors().items():
            if not np.all(np.isfinite(array)):
                layer = int(name.split(".")[1]) if name.startswith("layers.") else None
                raise NumericError(f"non-finite values in tensor '{name}'", layer=layer)

    def copy(self) -> "ModelWeights":
        with self.lock:
            return ModelWeights(
                embedding=self.embedding.copy(),
                position=self.position.copy(),
                layers=[layer.copy() for layer in self.layers],
                final_norm=self.final_norm.copy(),
                unembedding=self.unembedding.copy(),
            )

    def fingerprint(self) -> str:
        """sha256 over tensor names, shapes and raw little-endian bytes."""
        digest = hashlib.sha256()
        with self.lock:
            for name, array in self.named_tensors().items():
                digest.update(name.encode("utf-8"))
                digest.update(str(array.shape).encode("utf-8"))
                digest.update(np.ascontiguousarray(array, dtype="<f4").tobytes())
        return digest.hexdigest()

    def parameter_count(self) -> int:
        return int(sum(array.size for array in self.named_tensors().values()))

    # =========================================================================
    # Construction
    # =========================================================================

    @classmethod
    def random(cls, config: ModelConfig, seed: int = 0, scale: float = 0.02) -> "ModelWeights":
        """Gaussian weights with unit norm scales; deterministic in ``seed``."""
        if scale < 0:
            raise InputError(f"scale must be non-negative, got {scale}")
        rng = np.random.default_rng(seed)
        d, m, v = config.d_model, config.ffn_dim, config.vocab_size

        def normal(*shape) -> np.ndarray:
            return (rng.standard_normal(shape) * scale).astype(DTYPE)

        layers = []
        for _ in range(config.num_layers):
            layers.append(LayerWeights(
                attn_norm=np.ones(d, dtype=DTYPE),
                w_q=normal(d, d),
                w_k=normal(d, d),
                w_v=normal(d, d),
                w_o=normal(d, d),
                ffn_norm=np.ones(d, dtype=DTYPE),
                ffn_key=normal(m, d),
                ffn_value=normal(m, d),
                ffn_gate=normal(m, d) if config.gated else None,
            ))
        return cls(
            embedding=normal(v, d),
            position=normal(config.max_seq_len, d),
            layers=layers,
            final_norm=np.ones(d, dtype=DTYPE),
            unembedding=normal(v, d),
        )
