"""
Model core: configuration, weights, forward pass and container format.
"""
from .config import Activation, FfnVariant, ModelConfig, NormKind
from .forward import ForwardTrace, MacCounter, ffn_forward, forward_with_trace, predict_next
from .serialization import load_model, read_header, save_model
from .weights import LayerWeights, ModelWeights

__all__ = [
    "Activation",
    "FfnVariant",
    "ModelConfig",
    "NormKind",
    "ForwardTrace",
    "MacCounter",
    "ffn_forward",
    "forward_with_trace",
    "predict_next",
    "load_model",
    "read_header",
    "save_model",
    "LayerWeights",
    "ModelWeights",
]
