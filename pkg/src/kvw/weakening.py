"""
In-place scaling of FFN value rows by a gate vector.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List

import numpy as np

from src.errors import ConfigurationError, NumericError
from src.model.weights import DTYPE, ModelWeights
from src.kvw.accessor import GateVector

logger = logging.getLogger(__name__)

WEAKENED_TOLERANCE = 1e-9


@dataclass
class LayerEditSummary:
    layer: int
    rows_weakened: int
    min_gate: float
    mean_gate: float


@dataclass
class EditSummary:
    """What one call to :func:`apply_weakening` changed."""
    start_layer: int
    end_layer: int
    layers: List[LayerEditSummary] = field(default_factory=list)

    @property
    def rows_weakened(self) -> int:
        return sum(layer.rows_weakened for layer in self.layers)

    @property
    def min_gate(self) -> float:
        return min((layer.min_gate for layer in self.layers), default=1.0)

    @property
    def mean_gate(self) -> float:
        if not self.layers:
            return 1.0
        return float(np.mean([layer.mean_gate for layer in self.layers]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "start_layer": self.start_layer,
            "end_layer": self.end_layer,
            "rows_weakened": self.rows_weakened,
            "layers": [asdict(layer) for layer in self.layers],
        }


def check_layer_range(start_layer: int, end_layer: int, num_layers: int) -> None:
    if not 0 <= start_layer <= end_layer < num_layers:
        raise ConfigurationError(
            f"layer range [{start_layer}, {end_layer}] is invalid for a {num_layers}-layer model"
        )


def apply_weakening(
    weights: ModelWeights,
    g: GateVector,
    start_layer: int,
    end_layer: int,
) -> EditSummary:
    """
    Scale row i of ``ffn_value`` by g_i for every layer in [start_layer, end_layer].

    All new value matrices are computed and checked before any of them is
    swapped in, under the weights' lock. Rows with a gate of exactly 1 keep
    their original bits.

    Raises:
        ConfigurationError: Layer range or gate shape does not fit the model.
        NumericError: An edited row would become non-finite.
    """
    num_layers = len(weights.layers)
    check_layer_range(start_layer, end_layer, num_layers)
    ffn_dim = weights.layers[0].ffn_value.shape[0]
    if g.per_layer.shape != (num_layers, ffn_dim):
        raise ConfigurationError(
            f"gate shape {g.per_layer.shape} does not match model ({num_layers}, {ffn_dim})"
        )

    summary = EditSummary(start_layer=start_layer, end_layer=end_layer)
    staged: Dict[int, np.ndarray] = {}
    with weights.lock:
        for layer in range(start_layer, end_layer + 1):
            gates = g.per_layer[layer].astype(np.float64)
            value = weights.layers[layer].ffn_value
            touched = gates != 1.0
            if np.any(touched):
                new_value = value.copy()
                new_value[touched] = (value[touched].astype(np.float64) * gates[touched, None]).astype(DTYPE)
                if not np.all(np.isfinite(new_value)):
                    raise NumericError("weakened value rows are not finite", layer=layer)
                staged[layer] = new_value
            summary.layers.append(LayerEditSummary(
                layer=layer,
                rows_weakened=int(np.count_nonzero(gates < 1.0 - WEAKENED_TOLERANCE)),
                min_gate=float(gates.min()),
                mean_gate=float(gates.mean()),
            ))

        for layer, new_value in staged.items():
            weights.layers[layer].ffn_value = new_value

    for layer_summary in summary.layers:
        logger.debug(
            f"layer {layer_summary.layer}: {layer_summary.rows_weakened} rows weakened, "
            f"min gate {layer_summary.min_gate:.4f}"
        )
    return summary
