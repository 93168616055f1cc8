"""
Constrained configuration selection.

Among grid points whose retain score keeps at least ``floor`` of the vanilla
retain score, pick the lowest forget score. Ties go to the higher retain
score, then to the earlier grid position.
"""
import logging
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.errors import InputError, NoFeasibleConfigError
from src.kvw.unlearn import KvwConfig

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 0.95


@dataclass(frozen=True)
class GridResult:
    """Scores of one grid point."""
    config: Dict[str, Any]
    forget_score: float
    retain_score: float


@dataclass(frozen=True)
class Selection:
    """Outcome of :func:`select_under_constraint`."""
    chosen: Optional[GridResult]
    index: Optional[int]
    threshold: float
    feasible_count: int

    @property
    def feasible(self) -> bool:
        return self.chosen is not None

    def require(self) -> GridResult:
        if self.chosen is None:
            raise NoFeasibleConfigError(
                f"no configuration keeps retain score >= {self.threshold:.4f}"
            )
        return self.chosen

    def to_dict(self) -> Dict[str, Any]:
        return {
            "chosen": None if self.chosen is None else asdict(self.chosen),
            "index": self.index,
            "threshold": self.threshold,
            "feasible_count": self.feasible_count,
        }


def select_under_constraint(
    results: Sequence[GridResult],
    vanilla_retain: float,
    floor: float = DEFAULT_FLOOR,
) -> Selection:
    """
    Pick the configuration with the lowest forget score among feasible ones.

    Raises:
        InputError: Empty grid, floor outside (0, 1] or non-positive vanilla score.
    """
    if not results:
        raise InputError("cannot select from an empty grid")
    if not 0 < floor <= 1:
        raise InputError(f"retain floor must lie in (0, 1], got {floor}")
    if vanilla_retain <= 0:
        raise InputError(f"vanilla retain score must be positive, got {vanilla_retain}")

    threshold = floor * vanilla_retain
    feasible = [(i, r) for i, r in enumerate(results) if r.retain_score >= threshold]
    if not feasible:
        logger.warning(f"No feasible configuration among {len(results)} (threshold {threshold:.4f})")
        return Selection(chosen=None, index=None, threshold=threshold, feasible_count=0)

    index, chosen = min(feasible, key=lambda item: (item[1].forget_score, -item[1].retain_score, item[0]))
    return Selection(chosen=chosen, index=index, threshold=threshold, feasible_count=len(feasible))


@dataclass
class ProtocolConfig:
    """Selection protocol and its candidate grid."""
    retain_floor: float = DEFAULT_FLOOR
    folds: Tuple[int, int] = (1, 2)
    gammas: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.5, 1.0])
    layer_ranges: List[Tuple[int, Optional[int]]] = field(default_factory=lambda: [(0, None)])
    ans_only: List[bool] = field(default_factory=lambda: [True])
    use_retain: List[bool] = field(default_factory=lambda: [True])

    def __post_init__(self):
        if not 0 < self.retain_floor <= 1:
            raise InputError(f"retain floor must lie in (0, 1], got {self.retain_floor}")
        if len(self.folds) != 2 or self.folds[0] == self.folds[1]:
            raise InputError(f"folds must be two distinct splits, got {self.folds}")
        if not (self.gammas and self.layer_ranges and self.ans_only and self.use_retain):
            raise InputError("candidate grid must be non-empty")

    def candidates(self, base: KvwConfig) -> List[KvwConfig]:
        """Cartesian product of the grid lists, in a fixed order."""
        grid = []
        for gamma, (start, end), ans_only, use_retain in product(
            self.gammas, self.layer_ranges, self.ans_only, self.use_retain
        ):
            grid.append(base.replace(gamma=gamma, start_layer=start, end_layer=end,
                                     ans_only=ans_only, use_retain=use_retain))
        return grid
