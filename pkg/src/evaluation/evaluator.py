"""
Suite Evaluator - recall scores of edited planted-fact models.

Runs one KVW configuration against a suite and scores forget and retain
recall, overall and per evaluation split.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from src.coefficients.extract import CoefficientMode, CoefficientSource, KnowledgeCoefficients, accumulate
from src.kvw.unlearn import KvwConfig, kvw_unlearn
from src.model.weights import ModelWeights
from src.synth.builder import SynthSuite
from src.synth.recall import evaluate_recall

logger = logging.getLogger(__name__)

SPLITS = (1, 2)


@dataclass
class EvaluationResult:
    """Scores of one configuration on one suite."""
    config: Dict[str, Any]
    forget_acc: float
    retain_acc: float
    forget_by_split: Dict[int, float] = field(default_factory=dict)
    retain_by_split: Dict[int, float] = field(default_factory=dict)
    rows_weakened: int = 0
    label: str = ""

    def to_dict(self) -> Dict[str, Any]:
        row = {"label": self.label}
        row.update({k: v for k, v in self.config.items() if k in ROW_CONFIG_KEYS})
        row.update({
            "forget_acc": self.forget_acc,
            "retain_acc": self.retain_acc,
            "rows_weakened": self.rows_weakened,
        })
        for split in SPLITS:
            row[f"forget_split{split}"] = self.forget_by_split.get(split)
            row[f"retain_split{split}"] = self.retain_by_split.get(split)
        return row


ROW_CONFIG_KEYS = ("gamma", "start_layer", "end_layer", "ans_only", "use_retain", "batch_size", "mode")


class Evaluator:
    """
    Scores KVW configurations on a suite.

    Retain coefficients are computed once per (ans_only, mode) pair and
    shared across configurations; every configuration edits its own clone
    of the suite weights.
    """

    def __init__(self, suite: SynthSuite, workers: int = 1, seed: Optional[int] = None):
        """
        Initialize the evaluator.

        Args:
            suite: Planted-fact suite (its weights are never modified).
            workers: Threads for per-example forward passes.
            seed: Seed recorded in coefficient metadata.
        """
        self.suite = suite
        self.workers = workers
        self.seed = suite.seed if seed is None else seed
        self._retain_cache: Dict[Tuple[bool, CoefficientMode], KnowledgeCoefficients] = {}
        self._lock = threading.Lock()
        self._vanilla: Optional[EvaluationResult] = None

    def retain_coefficients(self, ans_only: bool = True,
                            mode: CoefficientMode = CoefficientMode.ABS) -> KnowledgeCoefficients:
        key = (ans_only, mode)
        with self._lock:
            if key not in self._retain_cache:
                self._retain_cache[key] = accumulate(
                    self.suite.retain_dataset,
                    self.suite.weights,
                    self.suite.config,
                    ans_only=ans_only,
                    mode=mode,
                    source=CoefficientSource.RETAIN,
                    workers=self.workers,
                    seed=self.seed,
                )
                logger.info(f"Retain coefficients ready (ans_only={ans_only}, mode={mode.value})")
            return self._retain_cache[key]

    def score(self, weights: ModelWeights, config: Dict[str, Any], label: str = "",
              rows_weakened: int = 0) -> EvaluationResult:
        suite = self.suite
        forget = evaluate_recall(weights, suite.forget_facts, suite.config)
        retain = evaluate_recall(weights, suite.retain_facts, suite.config)
        return EvaluationResult(
            config=config,
            forget_acc=forget.accuracy,
            retain_acc=retain.accuracy,
            forget_by_split={
                s: forget.subset(f.fact_id for f in suite.forget_facts if f.split == s).accuracy
                for s in SPLITS
            },
            retain_by_split={
                s: retain.subset(f.fact_id for f in suite.retain_facts if f.split == s).accuracy
                for s in SPLITS
            },
            rows_weakened=rows_weakened,
            label=label,
        )

    def vanilla(self) -> EvaluationResult:
        """Scores of the unedited suite model."""
        if self._vanilla is None:
            self._vanilla = self.score(self.suite.weights, {}, label="vanilla")
        return self._vanilla

    def evaluate(self, cfg: KvwConfig, label: str = "") -> EvaluationResult:
        """Unlearn the suite's forget set with ``cfg`` on a clone and score it."""
        retain = self.retain_coefficients(cfg.ans_only, cfg.mode) if cfg.use_retain else None
        edited, report = kvw_unlearn(
            self.suite.weights,
            self.suite.forget_dataset,
            retain,
            cfg,
            self.suite.config,
            workers=self.workers,
            seed=self.seed,
        )
        config = cfg.to_dict()
        config["end_layer"] = cfg.layer_range(self.suite.config.num_layers)[1]
        return self.score(edited, config, label=label, rows_weakened=report.rows_weakened)


def results_frame(results: List[EvaluationResult]) -> pd.DataFrame:
    """One row per result, columns in a fixed order."""
    return pd.DataFrame([r.to_dict() for r in results])


def aggregate_results(results: List[EvaluationResult]) -> Dict[str, Any]:
    """
    Aggregate evaluation results per (ans_only, use_retain) arm.

    Args:
        results: List of EvaluationResult objects

    Returns:
        Dictionary with aggregate statistics
    """
    if not results:
        return {}

    frame = results_frame(results)
    by_arm = {}
    for (ans_only, use_retain), group in frame.groupby(["ans_only", "use_retain"], sort=True):
        by_arm[f"ans_only={bool(ans_only)},use_retain={bool(use_retain)}"] = {
            "count": int(len(group)),
            "avg_forget_acc": float(group["forget_acc"].mean()),
            "avg_retain_acc": float(group["retain_acc"].mean()),
            "min_forget_acc": float(group["forget_acc"].min()),
            "max_retain_acc": float(group["retain_acc"].max()),
        }

    return {
        "total_evaluations": len(results),
        "by_arm": by_arm,
    }
