"""
Excel Builder for ranking and stress workbooks
- Summary sheet with the QoI and its mean
- Indices sheet with one row per index (sorted as reported)
- Optional Stress sheet with the I+/I- curve
"""

import logging
import os
from typing import Any, Dict, Optional

import pandas as pd
from openpyxl import load_workbook
from openpyxl.styles import Alignment, Font
from openpyxl.utils import get_column_letter

logger = logging.getLogger(__name__)

INDEX_COLUMNS = [
    "vertex",
    "eta",
    "i_plus",
    "i_minus",
    "share",
    "tight",
    "backend",
    "case_plus",
    "case_minus",
]


def _ensure_columns(df: pd.DataFrame) -> pd.DataFrame:
    """Ensure all index columns exist, filling blanks as needed."""
    for col in INDEX_COLUMNS:
        if col not in df.columns:
            df[col] = ""
    return df[INDEX_COLUMNS]


def _format_sheet(ws):
    """Bold header, frozen first row, widths fitted to content"""
    for cell in ws[1]:
        cell.font = Font(bold=True)
        cell.alignment = Alignment(horizontal="center")
    ws.freeze_panes = "A2"
    for n, column in enumerate(ws.columns, start=1):
        width = max(len(str(cell.value)) if cell.value is not None else 0 for cell in column)
        ws.column_dimensions[get_column_letter(n)].width = min(max(width + 2, 10), 40)


def build_report_workbook(report: Dict[str, Any], output_path: str,
                          stress: Optional[pd.DataFrame] = None) -> None:
    """Write a formatted .xlsx from a ranking or stress report dict"""
    directory = os.path.dirname(output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    indices = _ensure_columns(pd.DataFrame(report.get("indices", [])))
    summary = pd.DataFrame([
        {"field": "qoi", "value": report.get("qoi")},
        {"field": "qoi_mean", "value": report.get("qoi_mean")},
    ])

    with pd.ExcelWriter(output_path, engine="openpyxl") as writer:
        summary.to_excel(writer, index=False, sheet_name="Summary")
        indices.to_excel(writer, index=False, sheet_name="Indices")
        if stress is not None:
            stress.to_excel(writer, index=False, sheet_name="Stress")

    wb = load_workbook(output_path)
    for ws in wb.worksheets:
        _format_sheet(ws)
    wb.save(output_path)
    logger.info("Wrote workbook %s", output_path)
