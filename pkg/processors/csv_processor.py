"""
CSV Processor for observational data
Reads vertex-named CSV files into numeric frames for fitting and eta estimation
"""

import logging
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from processors.normalizer import normalize_eta, normalize_label, normalize_number
from utils.errors import DataFormatError, EmptyData

logger = logging.getLogger(__name__)

ENCODINGS = ["utf-8", "latin-1", "iso-8859-1", "cp1252"]


def _read_raw(filepath: str) -> pd.DataFrame:
    """Read every cell as text, trying the usual encodings in turn"""
    last_error = None
    for encoding in ENCODINGS:
        try:
            return pd.read_csv(filepath, encoding=encoding, dtype=str,
                               keep_default_na=False, skip_blank_lines=True)
        except UnicodeDecodeError as e:
            last_error = e
            continue
        except pd.errors.EmptyDataError:
            raise EmptyData(f"CSV file {filepath} is empty", {"file": str(filepath)})
        except (OSError, pd.errors.ParserError) as e:
            raise DataFormatError(f"Could not read CSV file {filepath}: {e}", {"file": str(filepath)})
    raise DataFormatError(f"Could not read CSV file {filepath} with any encoding: {last_error}",
                          {"file": str(filepath)})


def process_csv(filepath: str, required: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """
    Load a data CSV: header row of vertex names, numeric cells, '.' decimals.
    Rows with missing or non-numeric cells are rejected with their row numbers
    (1-based, counting the header as row 1).
    """
    raw = _read_raw(filepath)
    raw.columns = [normalize_label(c) for c in raw.columns]
    if raw.columns.duplicated().any():
        dupes = sorted(set(raw.columns[raw.columns.duplicated()]))
        raise DataFormatError(f"Duplicate columns {dupes} in {filepath}", {"columns": dupes})
    if required is not None:
        missing = [c for c in required if c not in raw.columns]
        if missing:
            raise DataFormatError(f"CSV {filepath} lacks columns {missing}", {"columns": missing})
    if raw.empty:
        raise EmptyData(f"CSV file {filepath} has no data rows", {"file": str(filepath)})

    frame = raw.apply(lambda col: col.map(normalize_number))
    bad = frame.isna().any(axis=1).to_numpy()
    if bad.any():
        rows = [int(i) + 2 for i in np.flatnonzero(bad)]
        raise DataFormatError(
            f"{len(rows)} row(s) in {filepath} have missing or non-numeric cells: {rows[:20]}",
            {"file": str(filepath), "rows": rows},
        )
    logger.info("Read %d rows x %d columns from %s", len(frame), frame.shape[1], filepath)
    return frame.astype(float)


def read_data_csv(filepath: str, labels: Iterable[str]) -> pd.DataFrame:
    """Data for a model: every model vertex must be a column; columns follow model order"""
    labels = list(labels)
    frame = process_csv(filepath, required=labels)
    extra = [c for c in frame.columns if c not in labels]
    if extra:
        logger.warning("Ignoring columns %s not in the model", extra)
    return frame[labels]


def read_residuals_csv(filepath: str, column: Optional[str] = None) -> np.ndarray:
    """One sample vector: the named column, or the only column"""
    frame = process_csv(filepath)
    if column is None:
        if frame.shape[1] != 1:
            raise DataFormatError(f"{filepath} has {frame.shape[1]} columns; name one",
                                  {"columns": list(frame.columns)})
        return frame.iloc[:, 0].to_numpy()
    if column not in frame.columns:
        raise DataFormatError(f"{filepath} has no column {column!r}", {"columns": list(frame.columns)})
    return frame[column].to_numpy()


def read_eta_csv(filepath: str) -> Dict[str, float]:
    """Two columns (vertex, eta) → per-vertex eta map"""
    raw = _read_raw(filepath)
    raw.columns = [normalize_label(c).lower() for c in raw.columns]
    if not {"vertex", "eta"} <= set(raw.columns):
        raise DataFormatError(f"Eta file {filepath} needs 'vertex' and 'eta' columns",
                              {"columns": list(raw.columns)})
    etas: Dict[str, float] = {}
    bad: List[int] = []
    for n, (vertex, eta) in enumerate(zip(raw["vertex"], raw["eta"])):
        value = normalize_eta(eta)
        if np.isnan(value) or not normalize_label(vertex):
            bad.append(n + 2)
            continue
        etas[normalize_label(vertex)] = value
    if bad:
        raise DataFormatError(f"Invalid eta rows in {filepath}: {bad}", {"rows": bad})
    return etas
