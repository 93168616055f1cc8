"""
Planted facts and their query template.

Every fact is a (subject, relation, answer) triple stored in one FFN slot.
Its query is the 3-token sequence [subject, relation, answer] with only the
final token marked as the answer.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional

from src.errors import ConfigurationError
from src.coefficients.dataset import TokenExample


class FactRole(Enum):
    """Which side of the unlearning request a fact belongs to."""
    FORGET = "forget"
    RETAIN = "retain"


@dataclass(frozen=True)
class FactSpec:
    """A single planted fact."""
    fact_id: str
    subject_token: int
    relation_token: int
    answer_token: int
    layer: int
    slot: int
    strength: float
    role: FactRole = FactRole.RETAIN
    split: int = 1
    neighbor_of: Optional[str] = None  # forget fact sharing this fact's subject

    def query(self) -> TokenExample:
        tokens = (self.subject_token, self.relation_token, self.answer_token)
        return TokenExample.from_span(tokens, 2, 3)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fact_id": self.fact_id,
            "subject_token": self.subject_token,
            "relation_token": self.relation_token,
            "answer_token": self.answer_token,
            "layer": self.layer,
            "slot": self.slot,
            "strength": self.strength,
            "role": self.role.value,
            "split": self.split,
            "neighbor_of": self.neighbor_of,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FactSpec":
        return cls(
            fact_id=str(data["fact_id"]),
            subject_token=int(data["subject_token"]),
            relation_token=int(data["relation_token"]),
            answer_token=int(data["answer_token"]),
            layer=int(data["layer"]),
            slot=int(data["slot"]),
            strength=float(data["strength"]),
            role=FactRole(data.get("role", "retain")),
            split=int(data.get("split", 1)),
            neighbor_of=data.get("neighbor_of"),
        )


def validate_facts(facts: Iterable[FactSpec]) -> List[FactSpec]:
    """
    Check the fact table.

    Raises:
        ConfigurationError: Duplicate ids or (layer, slot) pairs, an answer
            token equal to its subject or relation, non-positive strength,
            or a split outside {1, 2}.
    """
    facts = list(facts)
    seen_slots: Dict[tuple, str] = {}
    seen_ids = set()
    for fact in facts:
        if fact.fact_id in seen_ids:
            raise ConfigurationError(f"duplicate fact id {fact.fact_id}")
        seen_ids.add(fact.fact_id)

        key = (fact.layer, fact.slot)
        if key in seen_slots:
            raise ConfigurationError(
                f"facts {seen_slots[key]} and {fact.fact_id} share layer {fact.layer} slot {fact.slot}"
            )
        seen_slots[key] = fact.fact_id

        if fact.answer_token in (fact.subject_token, fact.relation_token):
            raise ConfigurationError(f"fact {fact.fact_id}: answer token repeats a prompt token")
        if fact.strength <= 0:
            raise ConfigurationError(f"fact {fact.fact_id}: strength must be positive")
        if fact.split not in (1, 2):
            raise ConfigurationError(f"fact {fact.fact_id}: split must be 1 or 2")
    return facts


def queries(facts: Iterable[FactSpec]) -> List[TokenExample]:
    return [fact.query() for fact in facts]
