"""
Model configuration for the decoder-only transformer.

The configuration is immutable once built; string tags are coerced to the
enums below and unknown tags raise VersionError so that containers written
by a newer engine fail loudly instead of loading with the wrong semantics.
"""
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict

from src.errors import ConfigurationError, VersionError


class Activation(str, Enum):
    """Elementwise FFN activation."""
    RELU = "relu"
    GELU = "gelu"
    SILU = "silu"


class FfnVariant(str, Enum):
    """Plain key-value FFN or the gated (GLU-style) form."""
    PLAIN = "plain"
    GATED = "gated"


class NormKind(str, Enum):
    RMSNORM = "rmsnorm"
    LAYERNORM = "layernorm"


def _coerce(enum_cls, value, field_name: str):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(str(value).lower())
    except ValueError:
        raise VersionError(f"Unknown {field_name} tag: {value!r}")


@dataclass(frozen=True)
class ModelConfig:
    """Shape and architecture description of a model."""
    num_layers: int = 4
    d_model: int = 64
    ffn_dim: int = 256
    num_heads: int = 4
    vocab_size: int = 512
    max_seq_len: int = 16
    activation: Activation = Activation.RELU
    ffn_variant: FfnVariant = FfnVariant.PLAIN
    norm: NormKind = NormKind.RMSNORM

    def __post_init__(self):
        object.__setattr__(self, "activation", _coerce(Activation, self.activation, "activation"))
        object.__setattr__(self, "ffn_variant", _coerce(FfnVariant, self.ffn_variant, "ffn variant"))
        object.__setattr__(self, "norm", _coerce(NormKind, self.norm, "norm"))

        for name in ("num_layers", "d_model", "ffn_dim", "num_heads", "vocab_size", "max_seq_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.num_heads != 0:
            raise ConfigurationError(
                f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads})"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @property
    def gated(self) -> bool:
        return self.ffn_variant is FfnVariant.GATED

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["activation"] = self.activation.value
        data["ffn_variant"] = self.ffn_variant.value
        data["norm"] = self.norm.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise VersionError(f"Unknown model config fields: {unknown}")
        return cls(**known)
