"""
Ablation Study Runner - answer-token masking and the retain contrast.

Runs the suite under three arms at a fixed configuration:
- ans_only off (coefficients over every position)
- use_retain off (retain profile replaced by the forget layer mean)
- both on (the full method)
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from src.kvw.unlearn import KvwConfig
from src.synth.builder import SynthSuite
from .evaluator import EvaluationResult, Evaluator, aggregate_results

logger = logging.getLogger(__name__)

# (name, ans_only, use_retain)
DEFAULT_ARMS: List[Tuple[str, bool, bool]] = [
    ("ans_only_off", False, True),
    ("use_retain_off", True, False),
    ("full", True, True),
]


@dataclass
class AblationStudyConfig:
    """Configuration for ablation study."""
    arms: List[Tuple[str, bool, bool]] = field(default_factory=lambda: list(DEFAULT_ARMS))
    output_dir: Optional[str] = None


@dataclass
class AblationStudyResults:
    """Complete results of an ablation study."""
    config: Dict[str, Any]
    rows: List[Dict[str, Any]]
    vanilla: Dict[str, Any]
    aggregated: Dict[str, Any]

    def row(self, arm: str) -> Dict[str, Any]:
        for row in self.rows:
            if row["arm"] == arm:
                return row
        raise KeyError(arm)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "rows": self.rows,
            "vanilla": self.vanilla,
            "aggregated": self.aggregated,
        }

    def to_json(self, filepath: str):
        """Save results to JSON file."""
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def to_markdown_report(self) -> str:
        """Generate a markdown table of the three arms."""
        report = []

        report.append("# Ablation Study Results: KVW\n\n")
        report.append(f"**gamma:** {self.config.get('gamma')}  \n")
        report.append(f"**Layer range:** [{self.config.get('start_layer')}, {self.config.get('end_layer')}]\n\n")

        report.append("| ans_only | use_retain | Forget split 1 | Forget split 2 | Forget | Retain | Selectivity |\n")
        report.append("|----------|------------|----------------|----------------|--------|--------|-------------|\n")
        report.append(
            f"| vanilla | - | {self.vanilla['forget_split1']:.2%} | {self.vanilla['forget_split2']:.2%} "
            f"| {self.vanilla['forget_acc']:.2%} | {self.vanilla['retain_acc']:.2%} | - |\n"
        )
        for row in self.rows:
            ans = "yes" if row["ans_only"] else "no"
            ret = "yes" if row["use_retain"] else "no"
            report.append(
                f"| {ans} | {ret} | {row['forget_split1']:.2%} | {row['forget_split2']:.2%} "
                f"| {row['forget_acc']:.2%} | {row['retain_acc']:.2%} | {row['selectivity']:+.2f} |\n"
            )
        return "".join(report)


class AblationStudy:
    """
    Run ablation study over the extraction and contrast switches.
    """

    def __init__(self, suite: SynthSuite, workers: int = 1):
        """
        Initialize ablation study.

        Args:
            suite: Planted-fact suite
            workers: Threads for per-example forward passes
        """
        self.suite = suite
        self.evaluator = Evaluator(suite, workers=workers)
        self.results: List[EvaluationResult] = []

    def run(self, cfg_base: KvwConfig, config: AblationStudyConfig = None) -> AblationStudyResults:
        """
        Run every arm from ``cfg_base``; retain coefficients are recomputed per
        arm with that arm's position selection.

        Returns:
            AblationStudyResults with one row per arm
        """
        if config is None:
            config = AblationStudyConfig()

        logger.info(f"Starting ablation study: {len(config.arms)} arms at gamma={cfg_base.gamma}")
        self.results = []
        rows = []
        for name, ans_only, use_retain in config.arms:
            cfg = cfg_base.replace(ans_only=ans_only, use_retain=use_retain)
            result = self.evaluator.evaluate(cfg, label=name)
            self.results.append(result)

            row = {"arm": name}
            row.update(result.to_dict())
            row["selectivity"] = result.retain_acc - result.forget_acc
            rows.append(row)
            logger.info(f"Arm {name}: forget={result.forget_acc:.3f} retain={result.retain_acc:.3f}")

        end_layer = cfg_base.layer_range(self.suite.config.num_layers)[1]
        study_results = AblationStudyResults(
            config={**cfg_base.to_dict(), "end_layer": end_layer, "arms": [a[0] for a in config.arms]},
            rows=rows,
            vanilla=self.evaluator.vanilla().to_dict(),
            aggregated=aggregate_results(self.results),
        )

        if config.output_dir:
            self._save_results(study_results, config.output_dir)
        return study_results

    def _save_results(self, results: AblationStudyResults, output_dir: str):
        """Save results to files."""
        output_path = Path(output_dir)
        output_path.mkdir(parents=True, exist_ok=True)

        json_file = output_path / "ablation.json"
        results.to_json(str(json_file))
        results.to_frame().to_csv(output_path / "ablation.csv", index=False)
        logger.info(f"Saved JSON results to {json_file}")

        md_file = output_path / "ablation.md"
        with open(md_file, 'w', encoding='utf-8') as f:
            f.write(results.to_markdown_report())
        logger.info(f"Saved Markdown report to {md_file}")


def run_ablation_study(
    suite: SynthSuite,
    cfg_base: KvwConfig,
    output_dir: Optional[str] = None,
    workers: int = 1,
) -> AblationStudyResults:
    """
    Convenience function to run an ablation study.

    Args:
        suite: Planted-fact suite
        cfg_base: Configuration shared by every arm
        output_dir: Where to save results (optional)
        workers: Threads for per-example forward passes

    Returns:
        AblationStudyResults
    """
    study = AblationStudy(suite, workers=workers)
    return study.run(cfg_base, AblationStudyConfig(output_dir=output_dir))
