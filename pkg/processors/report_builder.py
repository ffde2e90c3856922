"""
Report Builder
Assembles JSON reports and plot-ready CSV curves from engine results
"""

import json
import logging
import math
import os
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from engine.indices import IndexResult
from engine.workflow import CorrectabilityReport, RankingReport

logger = logging.getLogger(__name__)


def _clean(value: Any, path: str, non_finite: List[str]) -> Any:
    """JSON-safe copy; NaN and infinities become null and their paths are recorded"""
    if isinstance(value, dict):
        return {str(k): _clean(v, f"{path}.{k}", non_finite) for k, v in value.items()}
    if isinstance(value, (set, frozenset)):
        value = sorted(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_clean(v, f"{path}[{n}]", non_finite) for n, v in enumerate(value)]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            non_finite.append(path)
            return None
        return float(value)
    return value


def to_json(payload: Mapping[str, Any]) -> str:
    """
    Canonical report text: sorted keys, two-space indent, trailing newline.
    Non-finite numbers are written as null and listed under diagnostics.non_finite.
    """
    non_finite: List[str] = []
    cleaned = _clean(dict(payload), "$", non_finite)
    if non_finite:
        cleaned.setdefault("diagnostics", {})
        cleaned["diagnostics"]["non_finite"] = non_finite
    return json.dumps(cleaned, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_text(text: str, out: Optional[str]) -> None:
    """Write to a file, or stdout when out is None or '-'"""
    if out in (None, "-"):
        print(text, end="")
        return
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    logger.info("Wrote %s", out)


def index_entry(result: IndexResult, labels: Sequence[str], share: Optional[float] = None) -> Dict[str, Any]:
    entry = result.to_dict(labels)
    if share is not None:
        entry["share"] = share
    return entry


def index_report(result: IndexResult, labels: Sequence[str], qoi: str,
                 qoi_mean: Optional[float]) -> Dict[str, Any]:
    return {
        "qoi": qoi,
        "qoi_mean": qoi_mean,
        "indices": [index_entry(result, labels)],
        "diagnostics": dict(result.diagnostics),
    }


def ranking_report(report: RankingReport, labels: Sequence[str], qoi: str) -> Dict[str, Any]:
    """Entries in ranking order with shares; failed vertices are listed with their errors"""
    indices = []
    for entry in report.entries:
        if entry.index is None:
            continue
        row = index_entry(entry.index, labels, entry.share)
        row["relative"] = entry.relative
        assessment = report.assessments.get(entry.vertex)
        if assessment is not None:
            row["assessment"] = {"passed": assessment.passed, "ratio": assessment.ratio,
                                 "mode": assessment.mode, "tol": assessment.tol}
        indices.append(row)
    diagnostics = dict(report.diagnostics)
    diagnostics["degenerate"] = report.degenerate
    diagnostics["errors"] = {labels[e.vertex]: e.error for e in report.entries if e.error is not None}
    return {"qoi": qoi, "qoi_mean": report.qoi_mean, "indices": indices, "diagnostics": diagnostics}


def stress_frame(results: Sequence[IndexResult], labels: Sequence[str]) -> pd.DataFrame:
    """Plot-ready I+/I- curve over eta"""
    rows = [index_entry(r, labels) for r in results]
    columns = ["eta", "i_plus", "i_minus", "case_plus", "case_minus", "backend", "tight", "vertex"]
    return pd.DataFrame(rows, columns=columns)


def stress_report(results: Sequence[IndexResult], labels: Sequence[str], qoi: str,
                  qoi_mean: Optional[float]) -> Dict[str, Any]:
    return {"qoi": qoi, "qoi_mean": qoi_mean,
            "indices": [index_entry(r, labels) for r in results],
            "diagnostics": {"points": len(results)}}


def write_curve_csv(frame: pd.DataFrame, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    logger.info("Wrote curve %s (%d rows)", path, len(frame))


def correctability_report(report: CorrectabilityReport, labels: Sequence[str], qoi: str) -> Dict[str, Any]:
    def named(vertices) -> List[str]:
        return [labels[v] for v in sorted(vertices)]

    return {
        "qoi": qoi,
        "qoi_mean": None,
        "corrected": None if report.corrected is None else labels[report.corrected],
        "case": report.case,
        "unchanged": named(report.unchanged),
        "recheck": named(report.recheck),
        "indices": [
            {"vertex": labels[v], "before": report.before[v].plus.value,
             "after": report.after[v].plus.value,
             "delta": report.deltas.get(v, report.verified.get(v))}
            for v in sorted(report.before)
        ],
        "diagnostics": {"verified_unchanged": {labels[v]: d for v, d in sorted(report.verified.items())}},
    }
