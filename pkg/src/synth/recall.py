"""
Greedy-decoding recall of planted facts.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

from src.model.config import ModelConfig
from src.model.forward import forward_with_trace, predict_next
from src.model.weights import ModelWeights
from src.synth.facts import FactSpec

logger = logging.getLogger(__name__)


@dataclass
class RecallResult:
    """Per-fact hit flags plus the aggregate accuracy."""
    hits: Dict[str, bool] = field(default_factory=dict)
    predictions: Dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.hits)

    @property
    def accuracy(self) -> float:
        # An empty fact list counts as fully recalled.
        if not self.hits:
            return 1.0
        return sum(self.hits.values()) / len(self.hits)

    @property
    def misses(self) -> List[str]:
        return [fact_id for fact_id, hit in self.hits.items() if not hit]

    def subset(self, fact_ids: Iterable[str]) -> "RecallResult":
        ids = set(fact_ids)
        return RecallResult(
            hits={k: v for k, v in self.hits.items() if k in ids},
            predictions={k: v for k, v in self.predictions.items() if k in ids},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"accuracy": self.accuracy, "total": self.total, "misses": self.misses}


def evaluate_recall(
    weights: ModelWeights,
    facts: Iterable[FactSpec],
    config: ModelConfig,
    split: Optional[int] = None,
) -> RecallResult:
    """
    A fact is a hit iff the argmax at the position before its answer token
    is the answer token. ``split`` restricts evaluation to one split.
    """
    result = RecallResult()
    for fact in facts:
        if split is not None and fact.split != split:
            continue
        query = fact.query()
        trace = forward_with_trace(query, weights, config)
        position = int(query.selected_positions(ans_only=True)[0])
        predicted = predict_next(trace.logits[position])
        result.predictions[fact.fact_id] = predicted
        result.hits[fact.fact_id] = predicted == fact.answer_token
    return result
