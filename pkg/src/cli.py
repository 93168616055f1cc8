"""
Command-line entry point.

Usage:
    python -m src.cli build-synth --out data/suite --seed 0
    python -m src.cli precompute-retain --model M --retain R --out retain.kvwc
    python -m src.cli unlearn --model M --forget F --retain-cache C --gamma 0.5 --out edited.kvw
    python -m src.cli eval --suite data/suite/suite.json --model edited.kvw
    python -m src.cli sweep --suite data/suite/suite.json --kind gamma --gamma-list "0,0.1,0.5"
    python -m src.cli report --sweep-dir data/reports
    python -m src.cli cost --suite data/suite/suite.json

Exit codes: 0 success, 2 configuration or input error, 3 numeric error,
4 no feasible configuration.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import pandas as pd

from config.settings import Settings
from src.coefficients import CoefficientSource, accumulate, load_coeffs, load_dataset, save_coeffs
from src.errors import CompatibilityError, KvwError, NoFeasibleConfigError
from src.evaluation import (
    AblationStudy,
    DatasetSizes,
    Evaluator,
    MethodSpec,
    ProtocolConfig,
    aggregate_reports,
    flop_account,
    gamma_sweep,
    layer_sweep,
    two_fold_protocol,
    write_json,
    write_report,
)
from src.kvw import kvw_unlearn
from src.model import ModelConfig, load_model, read_header, save_model
from src.run_config import (
    BuildSynthConfig,
    CostConfig,
    EvalConfig,
    PrecomputeRetainConfig,
    ReportConfig,
    RunConfig,
    SweepConfig,
    UnlearnConfig,
    load_run_config,
)
from src.synth import SynthSuite, build_synth_model

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


# =============================================================================
# Subcommands
# =============================================================================

def cmd_build_synth(run: BuildSynthConfig) -> Path:
    suite = build_synth_model(
        run.n_forget,
        run.n_retain,
        run.suite_model_config(),
        seed=run.seed,
        planted_layer=run.planted_layer,
        n_neighbors=run.n_neighbors,
        n_relations=run.n_relations,
    )
    manifest = suite.save(run.out)
    print(manifest)
    return manifest


def cmd_precompute_retain(run: PrecomputeRetainConfig) -> Path:
    weights, config = load_model(run.model)
    retain = load_dataset(run.retain)
    coeffs = accumulate(
        retain,
        weights,
        config,
        ans_only=not run.all_positions,
        mode=run.mode,
        source=CoefficientSource.RETAIN,
        workers=run.workers,
        seed=run.seed,
    )
    path = save_coeffs(coeffs, run.out)
    logger.info(f"Retain pass done over {coeffs.token_count} positions")
    print(path)
    return path


def cmd_unlearn(run: UnlearnConfig) -> Path:
    header, _ = read_header(run.model)
    weights, config = load_model(run.model)
    forget = load_dataset(run.forget)
    cfg = run.kvw_config()
    retain = None if run.no_retain else load_coeffs(run.retain_cache, config)

    edited, report = kvw_unlearn(
        weights, forget, retain, cfg, config,
        inplace=True, workers=run.workers, seed=run.seed,
    )
    metadata = dict(header.get("metadata") or {})
    metadata["seed"] = run.seed
    save_model(edited, config, run.out, metadata=metadata)

    report.output_model = run.out.name
    report.to_json(str(run.report_path))
    logger.info(f"Report written to {run.report_path}")
    print(run.out)
    return run.out


def _load_suite_model(suite: SynthSuite, model_path: Optional[Path]):
    if model_path is None:
        return suite.weights
    weights, config = load_model(model_path)
    if config != suite.config:
        raise CompatibilityError(f"{model_path} does not match the suite model configuration")
    return weights


def cmd_eval(run: EvalConfig) -> Dict[str, Any]:
    suite = SynthSuite.load(run.suite)
    weights = _load_suite_model(suite, run.model)
    result = Evaluator(suite, seed=run.seed).score(weights, {}, label="eval")

    data = result.to_dict()
    data["model"] = str(run.model) if run.model else suite.model_path.name
    data["seed"] = run.seed
    if run.out is not None:
        write_json(data, run.out)
    print(json.dumps(data, sort_keys=True))
    return data


def _sweep_two_fold(run: SweepConfig, suite: SynthSuite, evaluator: Evaluator) -> Tuple[Dict[str, Any], pd.DataFrame, bool]:
    protocol = ProtocolConfig(
        retain_floor=run.floor,
        gammas=list(run.gamma_list),
        layer_ranges=[(run.start_layer, run.end_layer)],
        ans_only=[not run.all_positions],
        use_retain=[not run.no_retain],
    )
    grid = protocol.candidates(run.kvw_config())
    report = two_fold_protocol(suite, grid, protocol, workers=run.workers, evaluator=evaluator)

    rows = []
    for fold in report.folds:
        chosen = fold.selection.chosen
        rows.append({
            "fold": fold.fold,
            "select_split": fold.select_split,
            "eval_split": fold.eval_split,
            "gamma": None if chosen is None else chosen.config["gamma"],
            "select_forget": None if chosen is None else chosen.forget_score,
            "select_retain": None if chosen is None else chosen.retain_score,
            "held_out_forget": None if fold.held_out is None else fold.held_out.forget_score,
            "held_out_retain": None if fold.held_out is None else fold.held_out.retain_score,
        })
    data = report.to_dict()
    data["kind"] = "two-fold"
    return data, pd.DataFrame(rows), report.feasible


def cmd_sweep(run: SweepConfig) -> Tuple[Path, Path]:
    suite = SynthSuite.load(run.suite)
    evaluator = Evaluator(suite, seed=run.seed)
    base = run.kvw_config()
    feasible = True

    if run.kind == "gamma":
        result = gamma_sweep(suite, base, run.gamma_list, floor=run.floor,
                             workers=run.workers, evaluator=evaluator)
        data, frame = result.to_dict(), result.to_frame()
        if not result.feasible_region()["count"]:
            logger.warning("No gamma in the list meets the forget and retain targets")
    elif run.kind == "layer":
        result = layer_sweep(suite, base, run.bucket_count, floor=run.floor,
                             workers=run.workers, evaluator=evaluator)
        data, frame = result.to_dict(), result.to_frame()
    elif run.kind == "ablation":
        study = AblationStudy(suite, workers=run.workers)
        results = study.run(base)
        data, frame = results.to_dict(), results.to_frame()
        data["kind"] = "ablation"
    else:
        data, frame, feasible = _sweep_two_fold(run, suite, evaluator)

    data["seed"] = run.seed
    frame["seed"] = run.seed
    paths = write_report(data, frame, run.report_dir, run.report_name)
    if not feasible:
        raise NoFeasibleConfigError("no grid configuration meets the retain floor on a selection split")
    return paths


def cmd_report(run: ReportConfig) -> Dict[str, Any]:
    summary = aggregate_reports(run.sweep_dir)
    print(run.sweep_dir / "summary.md")
    return summary


def cmd_cost(run: CostConfig) -> Tuple[Path, Path]:
    if run.suite is not None:
        suite = SynthSuite.load(run.suite)
        config = suite.config
        forget, retain = len(suite.forget_facts), len(suite.retain_facts)
    else:
        config = ModelConfig(
            num_layers=run.num_layers,
            d_model=run.d_model,
            ffn_dim=run.ffn_dim,
            num_heads=run.num_heads,
            vocab_size=run.vocab_size,
            max_seq_len=run.max_seq_len,
            ffn_variant=run.ffn_variant,
        )
        forget, retain = run.forget_size, run.retain_size
    sizes = DatasetSizes(forget=forget, retain=retain, seq_len=run.seq_len, batch_size=run.batch_size)

    reports = [
        flop_account(config, sizes, MethodSpec.parse(tag, rank=run.rank, epochs=run.epochs))
        for tag in run.methods
    ]
    data = {
        "kind": "cost",
        "config": config.to_dict(),
        "sizes": {"forget": forget, "retain": retain, "seq_len": run.seq_len, "batch_size": run.batch_size},
        "rank": run.rank,
        "epochs": run.epochs,
        "seed": run.seed,
        "methods": [r.to_dict() for r in reports],
    }
    frame = pd.DataFrame([{k: v for k, v in r.to_dict().items() if k != "breakdown"} for r in reports])
    return write_report(data, frame, run.report_dir, run.name)


# =============================================================================
# Parser
# =============================================================================

COMMANDS: Dict[str, Tuple[type, Callable[[Any], Any]]] = {
    "build-synth": (BuildSynthConfig, cmd_build_synth),
    "precompute-retain": (PrecomputeRetainConfig, cmd_precompute_retain),
    "unlearn": (UnlearnConfig, cmd_unlearn),
    "eval": (EvalConfig, cmd_eval),
    "sweep": (SweepConfig, cmd_sweep),
    "report": (ReportConfig, cmd_report),
    "cost": (CostConfig, cmd_cost),
}


def _add_kvw_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gamma", type=float, help="Weakening strength")
    parser.add_argument("--start-layer", type=int)
    parser.add_argument("--end-layer", type=int)
    parser.add_argument("--eps", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--all-positions", action="store_true", help="Extract over every position")
    parser.add_argument("--mode", choices=["abs", "clamp"])
    parser.add_argument("--no-retain", action="store_true", help="Replace retain coefficients by the forget mean")


def _add_shape_flags(parser: argparse.ArgumentParser) -> None:
    for flag in ("--num-layers", "--d-model", "--ffn-dim", "--num-heads", "--vocab-size", "--max-seq-len"):
        parser.add_argument(flag, type=int)


def build_parser() -> argparse.ArgumentParser:
    # Unset flags stay out of the namespace so run documents and settings can fill them.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="JSON run document mirroring the flags")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="kvw", description="Knowledge vector weakening engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help_text, parents=[common], argument_default=argparse.SUPPRESS)

    p = add("build-synth", "Build a planted-fact suite")
    p.add_argument("--out", type=Path)
    p.add_argument("--n-forget", type=int)
    p.add_argument("--n-retain", type=int)
    p.add_argument("--n-neighbors", type=int)
    p.add_argument("--n-relations", type=int)
    p.add_argument("--planted-layer", type=int)
    _add_shape_flags(p)

    p = add("precompute-retain", "Cache retain coefficients")
    p.add_argument("--model", type=Path)
    p.add_argument("--retain", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--all-positions", action="store_true")
    p.add_argument("--mode", choices=["abs", "clamp"])

    p = add("unlearn", "Weaken knowledge vectors of a forget set")
    p.add_argument("--model", type=Path)
    p.add_argument("--forget", type=Path)
    p.add_argument("--retain-cache", type=Path)
    p.add_argument("--out", type=Path)
    _add_kvw_flags(p)

    p = add("eval", "Recall of a suite's forget and retain facts")
    p.add_argument("--suite", type=Path)
    p.add_argument("--model", type=Path)
    p.add_argument("--out", type=Path)

    p = add("sweep", "Gamma, layer, ablation or two-fold sweep")
    p.add_argument("--suite", type=Path)
    p.add_argument("--kind", choices=["gamma", "layer", "ablation", "two-fold"])
    p.add_argument("--gamma-list", type=str, help='Comma separated, e.g. "0,0.1,0.5"')
    p.add_argument("--floor", type=float)
    p.add_argument("--bucket-count", type=int)
    p.add_argument("--report-dir", type=Path)
    p.add_argument("--name")
    _add_kvw_flags(p)

    p = add("report", "Aggregate a sweep directory")
    p.add_argument("--sweep-dir", type=Path)

    p = add("cost", "Analytic FLOP and memory comparison")
    p.add_argument("--suite", type=Path)
    _add_shape_flags(p)
    p.add_argument("--ffn-variant", choices=["plain", "gated"])
    p.add_argument("--forget-size", type=int)
    p.add_argument("--retain-size", type=int)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--methods", type=str, help="Comma separated method tags")
    p.add_argument("--report-dir", type=Path)
    p.add_argument("--name")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    settings = Settings()

    command = args.pop("command")
    document = args.pop("config", None)
    log_level = args.pop("log_level", settings.log_level)
    logging.basicConfig(level=getattr(logging, str(log_level).upper(), logging.INFO), format=LOG_FORMAT)

    model_cls, handler = COMMANDS[command]
    try:
        run: RunConfig = load_run_config(model_cls, args, document, settings)
        logger.info(f"Running {command} with seed {run.seed}")
        handler(run)
    except KvwError as e:
        print(f"{command}: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
