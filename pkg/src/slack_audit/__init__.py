"""Group-fairness learners and slack-consistency audits."""

from slack_audit.data import Dataset, Schema, load_csv, stratified_binary_sample
from slack_audit.errors import (
    AlignmentError,
    DivergenceError,
    InfeasibleError,
    SchemaError,
    SizeError,
    SlackAuditError,
    StateError,
    UndefinedRateError,
    ValidationError,
)
from slack_audit.metrics import BiasNotion, bias, misclassification_loss, positive_rate

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "BiasNotion",
    "Dataset",
    "DivergenceError",
    "InfeasibleError",
    "Schema",
    "SchemaError",
    "SizeError",
    "SlackAuditError",
    "StateError",
    "UndefinedRateError",
    "ValidationError",
    "bias",
    "load_csv",
    "misclassification_loss",
    "positive_rate",
    "stratified_binary_sample",
]
