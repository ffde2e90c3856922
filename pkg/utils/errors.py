"""
Error types for the model uncertainty toolkit
Every domain failure carries a stable code used in CLI error reports
"""

from typing import Any, Dict, Optional


class ModelUncertaintyError(Exception):
    """Base class for all domain errors"""

    code = "ModelUncertaintyError"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": self.code,
            "message": self.message,
            "details": self.details,
        }


# ==================== GRAPH STRUCTURE ====================

class GraphError(ModelUncertaintyError):
    code = "GraphError"


class CycleDetected(GraphError):
    code = "CycleDetected"

    def __init__(self, cycle, message: Optional[str] = None):
        self.cycle = list(cycle)
        super().__init__(
            message or f"Graph contains a cycle: {' -> '.join(str(v) for v in self.cycle)}",
            {"cycle": self.cycle},
        )


class InvalidVertex(GraphError):
    code = "InvalidVertex"


class NotAncestor(GraphError):
    code = "NotAncestor"


class DimensionMismatch(GraphError):
    code = "DimensionMismatch"


class StructureMismatch(GraphError):
    code = "StructureMismatch"


class MultiVertexDiff(GraphError):
    code = "MultiVertexDiff"


class InvalidChain(GraphError):
    code = "InvalidChain"


# ==================== MODEL FAMILIES AND DATA ====================

class ModelDataError(ModelUncertaintyError):
    code = "ModelDataError"


class NonGaussianModel(ModelDataError):
    code = "NonGaussianModel"


class UnsupportedFamily(ModelDataError):
    code = "UnsupportedFamily"


class UnsupportedCPDFamily(ModelDataError):
    code = "UnsupportedCPDFamily"


class UnsupportedSampling(ModelDataError):
    code = "UnsupportedSampling"


class RankDeficientDesign(ModelDataError):
    code = "RankDeficientDesign"


class InsufficientData(ModelDataError):
    code = "InsufficientData"


class EmptyData(ModelDataError):
    code = "EmptyData"


class NonpositiveBandwidth(ModelDataError):
    code = "NonpositiveBandwidth"


class DegenerateReference(ModelDataError):
    code = "DegenerateReference"


class DomainExceeded(ModelDataError):
    code = "DomainExceeded"


class MGFNonexistent(ModelDataError):
    code = "MGFNonexistent"


class InvalidParams(ModelDataError):
    code = "InvalidParams"


class ParallelLines(ModelDataError):
    code = "ParallelLines"


class DataFormatError(ModelDataError):
    code = "DataFormatError"


# ==================== PARSING ====================

class ParseError(ModelUncertaintyError):
    """Syntax error with a location (offset for expressions, line/column for documents)"""

    code = "SyntaxError"

    def __init__(self, message: str, offset: Optional[int] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        details = {}
        if offset is not None:
            details["offset"] = offset
        if line is not None:
            details["line"] = line
        if column is not None:
            details["column"] = column
        super().__init__(message, details)
        self.offset = offset
        self.line = line
        self.column = column


class UnknownFunction(ParseError):
    code = "UnknownFunction"


class ArityError(ParseError):
    code = "ArityError"


class UnknownCpdKind(ModelUncertaintyError):
    code = "UnknownCpdKind"


class UnresolvedParent(ModelUncertaintyError):
    code = "UnresolvedParent"


class UnknownPreset(ModelUncertaintyError):
    code = "UnknownPreset"


# ==================== WORKFLOW ====================

class WorkflowError(ModelUncertaintyError):
    code = "WorkflowError"


class MissingBudget(WorkflowError):
    code = "MissingBudget"


class ZeroMeanRelative(WorkflowError):
    code = "ZeroMeanRelative"


class MismatchedAmbiguity(WorkflowError):
    code = "MismatchedAmbiguity"
