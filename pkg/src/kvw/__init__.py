"""
Knowledge Vector Weakening: accessor, gate, row scaling and the progressive loop.
"""
from .accessor import ForgetKnowledgeAccessor, GateVector, compute_fka, gate, retain_substitute
from .unlearn import BatchSummary, KvwConfig, UnlearnReport, kvw_unlearn, order_hash
from .weakening import EditSummary, LayerEditSummary, apply_weakening

__all__ = [
    "ForgetKnowledgeAccessor",
    "GateVector",
    "compute_fka",
    "gate",
    "retain_substitute",
    "BatchSummary",
    "KvwConfig",
    "UnlearnReport",
    "kvw_unlearn",
    "order_hash",
    "EditSummary",
    "LayerEditSummary",
    "apply_weakening",
]
