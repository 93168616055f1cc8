"""
Evaluation Module for the unlearning engine.

Provides:
- Constrained selection and the two-fold protocol
- Gamma and layer-range sensitivity sweeps
- The answer-masking / retain-contrast ablation
- An analytic FLOP and memory cost model
"""

from .ablation import AblationStudy, AblationStudyConfig, AblationStudyResults, run_ablation_study
from .cost import CostReport, DatasetSizes, Method, MethodSpec, flop_account, forward_flops, forward_macs
from .evaluator import EvaluationResult, Evaluator, aggregate_results
from .reports import aggregate_reports, write_json, write_report
from .selection import GridResult, ProtocolConfig, Selection, select_under_constraint
from .sweeps import SweepResult, bucket_partition, gamma_sweep, layer_candidates, layer_sweep
from .two_fold import TwoFoldReport, two_fold_protocol, two_fold_select

__all__ = [
    "AblationStudy",
    "AblationStudyConfig",
    "AblationStudyResults",
    "run_ablation_study",
    "CostReport",
    "DatasetSizes",
    "Method",
    "MethodSpec",
    "flop_account",
    "forward_flops",
    "forward_macs",
    "EvaluationResult",
    "Evaluator",
    "aggregate_results",
    "aggregate_reports",
    "write_json",
    "write_report",
    "GridResult",
    "ProtocolConfig",
    "Selection",
    "select_under_constraint",
    "SweepResult",
    "bucket_partition",
    "gamma_sweep",
    "layer_candidates",
    "layer_sweep",
    "TwoFoldReport",
    "two_fold_protocol",
    "two_fold_select",
]
