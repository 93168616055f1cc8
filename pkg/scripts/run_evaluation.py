import os
import sys
# Add project root to sys.path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
import logging
from pathlib import Path

from dotenv import load_dotenv

from config.settings import Settings
from src.evaluation import (
    DatasetSizes,
    Evaluator,
    MethodSpec,
    ProtocolConfig,
    aggregate_reports,
    flop_account,
    gamma_sweep,
    layer_sweep,
    run_ablation_study,
    two_fold_protocol,
    write_json,
    write_report,
)
from src.errors import NoFeasibleConfigError
from src.kvw import KvwConfig
from src.model import ModelConfig
from src.run_config import DEFAULT_METHODS
from src.synth import build_synth_model

# Configure logging
logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)


def pick_gamma(sweep) -> float:
    """Middle of the first feasible gamma interval."""
    try:
        return sweep.central_gamma()
    except NoFeasibleConfigError:
        raise SystemExit("No feasible gamma on this suite; widen the gamma grid.")


def main():
    print("--- STARTING DESK EVALUATION ---")
    load_dotenv()
    settings = Settings()

    parser = argparse.ArgumentParser(description="Build a suite and run every desk-scale analysis")
    parser.add_argument("--seed", type=int, default=settings.default_seed)
    parser.add_argument("--out", type=Path, default=settings.report_path / "desk")
    parser.add_argument("--workers", type=int, default=settings.workers)
    args = parser.parse_args()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    # 1. Build the planted-fact suite
    suite = build_synth_model(5, 20, ModelConfig(), seed=args.seed)
    suite.save(out / "suite")
    evaluator = Evaluator(suite, seed=args.seed)
    vanilla = evaluator.vanilla()
    logger.info(f"Vanilla recall: forget={vanilla.forget_acc:.2f} retain={vanilla.retain_acc:.2f}")

    # 2. Gamma sweep at full depth
    base = KvwConfig(gamma=0.0, eps=settings.eps, batch_size=settings.batch_size)
    sweep = gamma_sweep(suite, base, settings.gamma_grid, floor=settings.retain_floor,
                        workers=args.workers, evaluator=evaluator)
    write_report(sweep.to_dict(), sweep.to_frame(), out, "gamma")
    gamma = pick_gamma(sweep)
    logger.info(f"Feasible region: {sweep.feasible_region()['gamma_intervals']}, using gamma={gamma}")

    # 3. Layer-range sensitivity at that gamma
    buckets = min(settings.bucket_count, suite.config.num_layers)
    layers = layer_sweep(suite, base.replace(gamma=gamma), buckets, floor=settings.retain_floor,
                         workers=args.workers, evaluator=evaluator)
    write_report(layers.to_dict(), layers.to_frame(), out, "layer")

    # 4. Ablation of answer masking and the retain contrast
    ablation = run_ablation_study(suite, base.replace(gamma=gamma), output_dir=str(out), workers=args.workers)

    # 5. Two-fold selection
    protocol = ProtocolConfig(retain_floor=settings.retain_floor, gammas=list(settings.gamma_grid))
    report = two_fold_protocol(suite, protocol.candidates(base), protocol,
                               workers=args.workers, evaluator=evaluator)
    two_fold = report.to_dict()
    two_fold["kind"] = "two-fold"
    write_json(two_fold, out / "two_fold.json")

    # 6. Cost comparison
    sizes = DatasetSizes(forget=len(suite.forget_facts), retain=len(suite.retain_facts), seq_len=3)
    costs = [flop_account(suite.config, sizes, MethodSpec.parse(tag)) for tag in DEFAULT_METHODS]
    write_json({"kind": "cost", "seed": args.seed, "methods": [c.to_dict() for c in costs]}, out / "cost.json")

    aggregate_reports(out)

    print("\n" + "="*50)
    print("EVALUATION REPORT")
    print("="*50)
    print(ablation.to_markdown_report())
    for cost in costs:
        print(f"{cost.method:>18}: {cost.per_batch_flops:>12,} FLOPs/batch")
    print("="*50)
    print(f"Reports saved to: {out}")


if __name__ == "__main__":
    main()
