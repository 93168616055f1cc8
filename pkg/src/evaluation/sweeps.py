"""
Sensitivity sweeps over gamma and over the edited layer range.

Each grid point edits its own clone of the suite model; points can run
in a thread pool and results are always returned in grid order.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from tqdm import tqdm

from src.errors import ConfigurationError, InputError, NoFeasibleConfigError
from src.kvw.unlearn import KvwConfig
from src.synth.builder import SynthSuite
from src.evaluation.evaluator import EvaluationResult, Evaluator, results_frame
from src.evaluation.selection import DEFAULT_FLOOR

logger = logging.getLogger(__name__)

DEFAULT_BUCKETS = 8


@dataclass
class SweepResult:
    """Grid points of one sweep plus the vanilla reference."""
    kind: str
    points: List[EvaluationResult]
    vanilla: EvaluationResult
    floor: float = DEFAULT_FLOOR
    seed: Optional[int] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def threshold(self) -> float:
        return self.floor * self.vanilla.retain_acc

    def is_feasible(self, point: EvaluationResult) -> bool:
        return point.forget_acc == 0.0 and point.retain_acc >= self.threshold

    def to_frame(self) -> pd.DataFrame:
        frame = results_frame(self.points)
        frame["feasible"] = [self.is_feasible(p) for p in self.points]
        return frame

    def feasible_region(self) -> Dict[str, Any]:
        """Feasible points, and for gamma sweeps the contiguous gamma intervals."""
        flags = [self.is_feasible(p) for p in self.points]
        region: Dict[str, Any] = {"count": int(sum(flags))}
        if self.kind == "gamma":
            intervals: List[List[float]] = []
            current: Optional[List[float]] = None
            for point, ok in zip(self.points, flags):
                gamma = point.config["gamma"]
                if ok:
                    if current is None:
                        current = [gamma, gamma]
                    else:
                        current[1] = gamma
                elif current is not None:
                    intervals.append(current)
                    current = None
            if current is not None:
                intervals.append(current)
            region["gamma_intervals"] = intervals
        region["points"] = [i for i, ok in enumerate(flags) if ok]
        return region

    def central_gamma(self) -> float:
        """
        Middle grid gamma of the first feasible gamma interval.

        Raises:
            NoFeasibleConfigError: No grid point is feasible.
        """
        intervals = self.feasible_region().get("gamma_intervals") or []
        if not intervals:
            raise NoFeasibleConfigError(f"no feasible gamma among {len(self.points)} grid points")
        low, high = intervals[0]
        inside = [p.config["gamma"] for p in self.points if low <= p.config["gamma"] <= high]
        return inside[len(inside) // 2]

    def spread(self) -> Dict[str, float]:
        """Max minus min of forget and retain accuracy across the grid."""
        forget = [p.forget_acc for p in self.points]
        retain = [p.retain_acc for p in self.points]
        return {
            "forget": max(forget) - min(forget),
            "retain": max(retain) - min(retain),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "floor": self.floor,
            "threshold": self.threshold,
            "vanilla": self.vanilla.to_dict(),
            "points": [p.to_dict() for p in self.points],
            "feasible_region": self.feasible_region(),
            "spread": self.spread(),
            "meta": self.meta,
        }


def run_grid(
    evaluator: Evaluator,
    grid: Sequence[KvwConfig],
    workers: int = 1,
    show_progress: bool = False,
) -> List[EvaluationResult]:
    """Evaluate every configuration; output order matches ``grid``."""
    if not grid:
        raise InputError("grid must contain at least one configuration")

    # Shared retain passes run once, before the pool starts.
    for cfg in grid:
        if cfg.use_retain:
            evaluator.retain_coefficients(cfg.ans_only, cfg.mode)

    def run(item: Tuple[int, KvwConfig]) -> EvaluationResult:
        index, cfg = item
        result = evaluator.evaluate(cfg, label=f"point{index:03d}")
        logger.info(
            f"Point {index + 1}/{len(grid)}: gamma={cfg.gamma} "
            f"forget={result.forget_acc:.3f} retain={result.retain_acc:.3f}"
        )
        return result

    items = list(enumerate(grid))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(run, items), total=len(items), disable=not show_progress))
    return [run(item) for item in tqdm(items, disable=not show_progress)]


# =============================================================================
# Gamma sweep
# =============================================================================

def gamma_sweep(
    suite: SynthSuite,
    cfg_base: KvwConfig,
    gamma_list: Sequence[float],
    floor: float = DEFAULT_FLOOR,
    workers: int = 1,
    evaluator: Optional[Evaluator] = None,
) -> SweepResult:
    """
    Forget and retain recall as gamma grows.

    Raises:
        InputError: Empty or unsorted gamma list, or a negative gamma.
    """
    gammas = [float(g) for g in gamma_list]
    if not gammas:
        raise InputError("gamma list is empty")
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise InputError(f"gamma list must be sorted ascending, got {gammas}")
    if gammas[0] < 0:
        raise InputError("gamma values must be non-negative")

    evaluator = evaluator or Evaluator(suite)
    grid = [cfg_base.replace(gamma=g) for g in gammas]
    points = run_grid(evaluator, grid, workers)
    result = SweepResult(kind="gamma", points=points, vanilla=evaluator.vanilla(), floor=floor,
                         seed=suite.seed, meta={"gammas": gammas})
    logger.info(f"Gamma sweep done: {result.feasible_region()['count']} feasible of {len(points)}")
    return result


# =============================================================================
# Layer sweep
# =============================================================================

def bucket_partition(num_layers: int, bucket_count: int = DEFAULT_BUCKETS) -> List[List[int]]:
    """
    Split layer indices into ``bucket_count`` contiguous buckets.

    Bucket size is num_layers // bucket_count; the remainder goes one extra
    layer each to the leading buckets.
    """
    if bucket_count < 1:
        raise ConfigurationError(f"bucket_count must be positive, got {bucket_count}")
    if num_layers < bucket_count:
        raise ConfigurationError(
            f"{num_layers} layers cannot be split into {bucket_count} buckets"
        )
    size, remainder = divmod(num_layers, bucket_count)
    buckets = []
    start = 0
    for index in range(bucket_count):
        width = size + (1 if index < remainder else 0)
        buckets.append(list(range(start, start + width)))
        start += width
    return buckets


def layer_candidates(num_layers: int, bucket_count: int = DEFAULT_BUCKETS) -> List[Tuple[int, int]]:
    """Start layers from the first bucket crossed with end layers from the last."""
    buckets = bucket_partition(num_layers, bucket_count)
    return [(start, end) for start in buckets[0] for end in buckets[-1]]


def layer_sweep(
    suite: SynthSuite,
    cfg_base: KvwConfig,
    bucket_count: int = DEFAULT_BUCKETS,
    floor: float = DEFAULT_FLOOR,
    workers: int = 1,
    evaluator: Optional[Evaluator] = None,
) -> SweepResult:
    """Recall over every (start_layer, end_layer) candidate at fixed gamma."""
    candidates = layer_candidates(suite.config.num_layers, bucket_count)
    evaluator = evaluator or Evaluator(suite)
    grid = [cfg_base.replace(start_layer=s, end_layer=e) for s, e in candidates]
    points = run_grid(evaluator, grid, workers)
    return SweepResult(kind="layer", points=points, vanilla=evaluator.vanilla(), floor=floor,
                       seed=suite.seed,
                       meta={"bucket_count": bucket_count, "candidates": [list(c) for c in candidates]})
