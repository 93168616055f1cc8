"""
Two-fold selection protocol.

The grid is scored on both evaluation splits. Fold k selects a configuration
on one split under the retain constraint and reports that configuration's
scores on the other split, next to the best configuration the held-out
split itself would have picked.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.errors import InputError
from src.kvw.unlearn import KvwConfig
from src.synth.builder import SynthSuite
from src.evaluation.evaluator import Evaluator
from src.evaluation.selection import GridResult, ProtocolConfig, Selection, select_under_constraint
from src.evaluation.sweeps import run_grid

logger = logging.getLogger(__name__)


@dataclass
class FoldOutcome:
    """One fold: select on ``select_split``, report on ``eval_split``."""
    fold: int
    select_split: int
    eval_split: int
    selection: Selection
    held_out: Optional[GridResult]
    held_out_best: Selection

    @property
    def generalization_gap(self) -> Optional[Dict[str, float]]:
        """Held-out minus selection-split scores of the chosen configuration."""
        if self.selection.chosen is None or self.held_out is None:
            return None
        gap = {
            "forget": self.held_out.forget_score - self.selection.chosen.forget_score,
            "retain": self.held_out.retain_score - self.selection.chosen.retain_score,
        }
        if self.held_out_best.chosen is not None:
            gap["forget_regret"] = self.held_out.forget_score - self.held_out_best.chosen.forget_score
        return gap

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fold": self.fold,
            "select_split": self.select_split,
            "eval_split": self.eval_split,
            "selection": self.selection.to_dict(),
            "held_out": None if self.held_out is None else asdict(self.held_out),
            "held_out_best": self.held_out_best.to_dict(),
            "generalization_gap": self.generalization_gap,
        }


@dataclass
class TwoFoldReport:
    folds: List[FoldOutcome] = field(default_factory=list)
    vanilla_retain: Dict[int, float] = field(default_factory=dict)
    floor: float = 0.95

    @property
    def feasible(self) -> bool:
        return all(fold.selection.feasible for fold in self.folds)

    def held_out_mean(self) -> Optional[Dict[str, float]]:
        scores = [fold.held_out for fold in self.folds]
        if any(s is None for s in scores):
            return None
        return {
            "forget": sum(s.forget_score for s in scores) / len(scores),
            "retain": sum(s.retain_score for s in scores) / len(scores),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "floor": self.floor,
            "vanilla_retain": {str(k): v for k, v in sorted(self.vanilla_retain.items())},
            "folds": [fold.to_dict() for fold in self.folds],
            "held_out_mean": self.held_out_mean(),
        }


def two_fold_select(
    split_scores: Dict[int, Sequence[GridResult]],
    vanilla_retain: Dict[int, float],
    floor: float = 0.95,
    folds: Tuple[int, int] = (1, 2),
) -> TwoFoldReport:
    """
    Run both folds over precomputed per-split score tables.

    Raises:
        InputError: Missing or mismatched split tables, or identical splits.
    """
    first, second = folds
    if first == second:
        raise InputError("the two folds must use different splits")
    for split in folds:
        if split not in split_scores or not split_scores[split]:
            raise InputError(f"split {split} has no scores")
        if split not in vanilla_retain:
            raise InputError(f"split {split} has no vanilla retain score")
    if len(split_scores[first]) != len(split_scores[second]):
        raise InputError("both splits must score the same grid")

    report = TwoFoldReport(vanilla_retain=dict(vanilla_retain), floor=floor)
    for fold, (select_split, eval_split) in enumerate([(first, second), (second, first)], start=1):
        selection = select_under_constraint(split_scores[select_split], vanilla_retain[select_split], floor)
        held_out = None
        if selection.index is not None:
            held_out = split_scores[eval_split][selection.index]
        held_out_best = select_under_constraint(split_scores[eval_split], vanilla_retain[eval_split], floor)
        report.folds.append(FoldOutcome(
            fold=fold,
            select_split=select_split,
            eval_split=eval_split,
            selection=selection,
            held_out=held_out,
            held_out_best=held_out_best,
        ))
    return report


def two_fold_protocol(
    suite: SynthSuite,
    grid: Sequence[KvwConfig],
    protocol: Optional[ProtocolConfig] = None,
    workers: int = 1,
    evaluator: Optional[Evaluator] = None,
) -> TwoFoldReport:
    """
    Score ``grid`` on the suite and run both selection folds.

    Raises:
        InputError: A split has no forget or no retain facts.
    """
    protocol = protocol or ProtocolConfig()
    for split in protocol.folds:
        if not any(f.split == split for f in suite.forget_facts) or \
           not any(f.split == split for f in suite.retain_facts):
            raise InputError(f"split {split} needs at least one forget and one retain fact")

    evaluator = evaluator or Evaluator(suite)
    results = run_grid(evaluator, grid, workers)
    vanilla = evaluator.vanilla()

    split_scores = {
        split: [GridResult(config=r.config, forget_score=r.forget_by_split[split],
                           retain_score=r.retain_by_split[split]) for r in results]
        for split in protocol.folds
    }
    vanilla_retain = {split: vanilla.retain_by_split[split] for split in protocol.folds}
    report = two_fold_select(split_scores, vanilla_retain, protocol.retain_floor, protocol.folds)
    logger.info(f"Two-fold protocol done over {len(grid)} configurations")
    return report
