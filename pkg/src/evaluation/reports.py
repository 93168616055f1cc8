"""
Report writers.

Every sweep writes ``<name>.csv`` (one row per grid point) and
``<name>.json`` (sorted keys). Files carry no timestamps, so identical runs
produce identical bytes.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import pandas as pd

from src.errors import InputError

logger = logging.getLogger(__name__)

SUMMARY_JSON = "summary.json"
SUMMARY_MD = "summary.md"


def write_json(data: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_report(
    data: Dict[str, Any],
    frame: pd.DataFrame,
    out_dir: Union[str, Path],
    name: str,
) -> Tuple[Path, Path]:
    """Write ``<name>.csv`` and ``<name>.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    frame.to_csv(csv_path, index=False)
    json_path = write_json(data, out_dir / f"{name}.json")
    logger.info(f"Wrote {csv_path} and {json_path}")
    return csv_path, json_path


def aggregate_reports(sweep_dir: Union[str, Path]) -> Dict[str, Any]:
    """
    Summarize every sweep JSON in ``sweep_dir`` into summary.json and summary.md.

    Raises:
        InputError: Directory missing or holding no sweep reports.
    """
    sweep_dir = Path(sweep_dir)
    if not sweep_dir.is_dir():
        raise InputError(f"sweep directory not found: {sweep_dir}")

    entries: List[Dict[str, Any]] = []
    for path in sorted(sweep_dir.glob("*.json")):
        if path.name == SUMMARY_JSON:
            continue
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        entries.append(_summarize(path.stem, data))
    if not entries:
        raise InputError(f"no sweep reports found in {sweep_dir}")

    summary = {"reports": entries}
    write_json(summary, sweep_dir / SUMMARY_JSON)
    with open(sweep_dir / SUMMARY_MD, "w", encoding="utf-8") as f:
        f.write(to_markdown(entries))
    logger.info(f"Summarized {len(entries)} reports in {sweep_dir}")
    return summary


def _summarize(name: str, data: Dict[str, Any]) -> Dict[str, Any]:
    entry: Dict[str, Any] = {"name": name, "kind": data.get("kind", "unknown")}
    if "points" in data:
        frame = pd.DataFrame(data["points"])
        entry["points"] = int(len(frame))
        entry["feasible"] = data.get("feasible_region", {}).get("count")
        entry["min_forget_acc"] = float(frame["forget_acc"].min())
        entry["max_retain_acc"] = float(frame["retain_acc"].max())
        entry["spread"] = data.get("spread")
    elif "rows" in data:
        entry["kind"] = "ablation"
        entry["rows"] = [
            {"arm": r["arm"], "forget_acc": r["forget_acc"], "retain_acc": r["retain_acc"],
             "selectivity": r["selectivity"]}
            for r in data["rows"]
        ]
    elif "folds" in data:
        entry["kind"] = "two-fold"
        entry["folds"] = [
            {
                "fold": fold["fold"],
                "chosen": (fold["selection"]["chosen"] or {}).get("config"),
                "held_out": fold["held_out"],
                "gap": fold["generalization_gap"],
            }
            for fold in data["folds"]
        ]
    elif "methods" in data:
        entry["kind"] = "cost"
        entry["methods"] = {m["method"]: m["per_batch_flops"] for m in data["methods"]}
    return entry


def to_markdown(entries: List[Dict[str, Any]]) -> str:
    lines = ["# Sweep Summary\n\n"]
    lines.append("| Report | Kind | Points | Feasible | Min forget | Max retain |\n")
    lines.append("|--------|------|--------|----------|------------|------------|\n")
    for entry in entries:
        if "points" in entry:
            lines.append(
                f"| {entry['name']} | {entry['kind']} | {entry['points']} | {entry['feasible']} "
                f"| {entry['min_forget_acc']:.2%} | {entry['max_retain_acc']:.2%} |\n"
            )
        else:
            lines.append(f"| {entry['name']} | {entry['kind']} | - | - | - | - |\n")

    for entry in entries:
        if entry["kind"] == "ablation":
            lines.append(f"\n## {entry['name']}\n\n")
            lines.append("| Arm | Forget | Retain | Selectivity |\n")
            lines.append("|-----|--------|--------|-------------|\n")
            for row in entry["rows"]:
                lines.append(
                    f"| {row['arm']} | {row['forget_acc']:.2%} | {row['retain_acc']:.2%} "
                    f"| {row['selectivity']:+.2f} |\n"
                )
        elif entry["kind"] == "two-fold":
            lines.append(f"\n## {entry['name']}\n\n")
            for fold in entry["folds"]:
                lines.append(f"- fold {fold['fold']}: chosen {fold['chosen']}, gap {fold['gap']}\n")
    return "".join(lines)
