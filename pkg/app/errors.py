"""
Error types and machine-readable error payloads.
Every failure the toolkit raises derives from HEIError.
"""
from typing import Any, Dict, Optional


class HEIError(Exception):
    """Base error for the toolkit."""


class ConfigError(HEIError):
    """Invalid experiment / training configuration."""


class GraphFormatError(HEIError):
    """Malformed graph input files."""


class DanglingNodeError(GraphFormatError):
    """Edge references a node id outside [0, N)."""


class FeatureFormatError(GraphFormatError):
    """Non-numeric or ragged feature file."""


class CountMismatchError(GraphFormatError):
    """Feature rows and label count disagree."""


class LabelsRequiredError(HEIError):
    """Homophily needs labels on the node and all of its neighbors."""


class SplitError(HEIError):
    """Invalid node split or an evaluation setting that cannot be built."""


class ShapeError(HEIError):
    """Tensor shape mismatch."""


class NonFiniteError(HEIError):
    """NaN/Inf in a loss, gradient or tensor."""


class TrainingError(HEIError):
    """Trainer failure (divergence, bad environment partition, ...)."""


class ReportError(HEIError):
    """Report requested on empty or inconsistent results."""


class TrialError(HEIError):
    """Error raised inside one trial of an experiment."""

    def __init__(self, trial: int, cause: BaseException):
        self.trial = trial
        self.cause = cause
        super().__init__(f"trial {trial} failed: {type(cause).__name__}: {cause}")


# ============================================================================
# ERROR MESSAGES WITH ACTIONABLE ADVICE
# ============================================================================

_HINTS = {
    "ConfigError": "Check the config file against docs/CONFIG.md",
    "DanglingNodeError": "Edge file references a node id >= number of feature rows",
    "FeatureFormatError": "Feature CSV must be numeric, no header, one row per node",
    "CountMismatchError": "Feature rows and label lines must have the same count",
    "GraphFormatError": "Check the edge/feature/label file formats",
    "LabelsRequiredError": "Homophily-based splits need labeled nodes with labeled neighbors",
    "SplitError": "Split must be disjoint, in range, with labeled train nodes",
    "ShapeError": "Tensor shapes are incompatible for this op",
    "NonFiniteError": "Lower the learning rate or penalty weight",
    "TrainingError": "Inspect the epoch log (epochs.jsonl) for the failing phase",
    "ReportError": "Pass at least one result.json to report",
}


def format_error_payload(error: BaseException) -> Dict[str, Any]:
    """Machine-readable error JSON for the CLI."""
    trial: Optional[int] = None
    root = error
    if isinstance(error, TrialError):
        trial = error.trial
        root = error.cause
    name = type(root).__name__
    return {
        "error": name,
        "message": str(error),
        "hint": _HINTS.get(name, "Unexpected failure; rerun with HEI_LOG_LEVEL=DEBUG"),
        "trial": trial,
    }
