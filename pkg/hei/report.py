"""
Comparison tables across experiment results (markdown + CSV).
"""
import math
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from app.errors import ReportError
from app.logger import get_logger
from app.utils import atomic_write_text, provenance_header, read_json
from hei.harness import GROUPS, RESULT_JSON

logger = get_logger(__name__)

REPORT_MD = "report.md"
REPORT_CSV = "report.csv"


def load_result(path: str) -> Dict[str, Any]:
    """Accepts a result.json path or the directory holding it."""
    if os.path.isdir(path):
        path = os.path.join(path, RESULT_JSON)
    if not os.path.exists(path):
        raise ReportError(f"result file not found: {path}")
    payload = read_json(path)
    for key in ("method", "setting", "trials"):
        if key not in payload:
            raise ReportError(f"{path}: missing '{key}'")
    return payload


def _values(result: Dict[str, Any], group: str) -> np.ndarray:
    return np.array([row[group] for row in result["trials"]], dtype=np.float64)


def _seeds(result: Dict[str, Any]) -> List[int]:
    return [row.get("seed") for row in result["trials"]]


def paired_delta(result: Dict[str, Any], baseline: Dict[str, Any], group: str) -> Tuple[Optional[float], Optional[float]]:
    """
    Mean per-trial difference against the baseline and the paired t-test
    p-value. Trials are paired by seed; None when nothing pairs up.
    """
    base = {row.get("seed"): row[group] for row in baseline["trials"]}
    pairs = [(row[group], base[row.get("seed")]) for row in result["trials"] if row.get("seed") in base]
    if not pairs:
        return None, None
    a = np.array([p[0] for p in pairs], dtype=np.float64)
    b = np.array([p[1] for p in pairs], dtype=np.float64)
    delta = float((a - b).mean())
    if len(pairs) < 2 or np.allclose(a - b, (a - b)[0]):
        return delta, None
    p_value = float(stats.ttest_rel(a, b).pvalue)
    return delta, None if math.isnan(p_value) else p_value


def report_config(paths: Sequence[str], results: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    """Config echo of a report: its inputs in order and the config each one ran with."""
    return {
        "inputs": [str(p) for p in paths],
        "configs": [result.get("config") for result in results],
    }


def build_table(results: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """One row per result; deltas and p-values are against the first result."""
    if not results:
        raise ReportError("report needs at least one result")
    baseline = results[0]
    rows = []
    for i, result in enumerate(results):
        row: Dict[str, Any] = {
            "method": result["method"],
            "setting": result["setting"],
            "trials": len(result["trials"]),
        }
        for group in GROUPS:
            vals = _values(result, group)
            row[f"{group}_mean"] = float(vals.mean()) if vals.size else float("nan")
            row[f"{group}_std"] = float(vals.std()) if vals.size else float("nan")
        if len(results) > 1:
            for group in GROUPS:
                delta, p_value = (0.0, None) if i == 0 else paired_delta(result, baseline, group)
                row[f"{group}_delta"] = delta
                row[f"{group}_p"] = p_value
        rows.append(row)
    return pd.DataFrame(rows)


def _cell(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


def to_markdown(table: pd.DataFrame) -> str:
    has_delta = f"{GROUPS[0]}_delta" in table.columns
    header = ["method", "setting", *GROUPS]
    if has_delta:
        header += [f"Δ {g}" for g in GROUPS] + [f"p {g}" for g in GROUPS]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for _, row in table.iterrows():
        cells = [str(row["method"]), str(row["setting"])]
        cells += [_cell(row[f"{g}_mean"], row[f"{g}_std"]) for g in GROUPS]
        if has_delta:
            cells += ["-" if pd.isna(row[f"{g}_delta"]) else f"{row[f'{g}_delta']:+.2f}" for g in GROUPS]
            cells += ["-" if pd.isna(row[f"{g}_p"]) else f"{row[f'{g}_p']:.3g}" for g in GROUPS]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def report(paths: Sequence[str], output_dir: Optional[str] = None) -> Tuple[str, pd.DataFrame]:
    """Load results, build the table and optionally write report.md / report.csv."""
    if not paths:
        raise ReportError("report needs at least one result")
    results = [load_result(p) for p in paths]
    table = build_table(results)
    markdown = to_markdown(table)
    if output_dir:
        echo, seeds = report_config(paths, results), _seeds(results[0])
        atomic_write_text(os.path.join(output_dir, REPORT_MD),
                          "<!--\n" + provenance_header(echo, seeds, prefix="") + "-->\n" + markdown)
        atomic_write_text(os.path.join(output_dir, REPORT_CSV),
                          provenance_header(echo, seeds)
                          + table.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
        logger.info(f"Report written to {output_dir}")
    return markdown, table
