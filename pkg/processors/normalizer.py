"""
Normalization Module
Provides functions to normalize labels and numeric cells before they reach the engine
"""

import math
import re
from typing import Any

_MISSING = {"", "nan", "none", "null", "n/a", "na"}
_LABEL_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def normalize_label(value: Any) -> str:
    """
    Normalize vertex labels and CSV headers
    Strips whitespace and a UTF-8 byte-order mark; internal spaces become '_'
    """
    if value is None:
        return ""
    label = str(value).replace("\ufeff", "").strip()
    return re.sub(r"\s+", "_", label)


def is_valid_label(label: str) -> bool:
    """Labels double as expression identifiers, so they follow identifier syntax"""
    return bool(_LABEL_RE.match(label))


def is_missing(value: Any) -> bool:
    if value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return str(value).strip().lower() in _MISSING


def normalize_number(value: Any) -> float:
    """
    Normalize a numeric cell
    '.' is the only decimal separator; missing or unparsable cells → NaN
    """
    if is_missing(value):
        return math.nan
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(str(value).strip())
    except ValueError:
        return math.nan


def normalize_eta(value: Any) -> float:
    """
    Normalize a misspecification level
    Accepts 'inf'; anything negative or unparsable → NaN so callers can reject it
    """
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    eta = normalize_number(value)
    if math.isnan(eta) or eta < 0:
        return math.nan
    return eta
