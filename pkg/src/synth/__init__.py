"""
Planted-fact suites: facts, model builder and recall evaluation.
"""
from .builder import SynthSuite, build_synth_model, verify_suite
from .facts import FactRole, FactSpec, queries, validate_facts
from .recall import RecallResult, evaluate_recall

__all__ = [
    "SynthSuite",
    "build_synth_model",
    "verify_suite",
    "FactRole",
    "FactSpec",
    "queries",
    "validate_facts",
    "RecallResult",
    "evaluate_recall",
]
