"""Bias and loss of (possibly stochastic) classifiers, evaluated exactly in
expectation over their positive-prediction probabilities."""

from __future__ import annotations

import enum

import numpy as np

from slack_audit.data import Dataset
from slack_audit.errors import AlignmentError, UndefinedRateError, ValidationError


class BiasNotion(enum.Enum):
    DEMOGRAPHIC_PARITY = "dempar"
    EQUAL_OPPORTUNITY = "eqopp"

    @classmethod
    def parse(cls, value: "str | BiasNotion") -> "BiasNotion":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "dempar": cls.DEMOGRAPHIC_PARITY,
            "demographicparity": cls.DEMOGRAPHIC_PARITY,
            "eqopp": cls.EQUAL_OPPORTUNITY,
            "equalopportunity": cls.EQUAL_OPPORTUNITY,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown bias notion {value!r}; use 'dempar' or 'eqopp'") from None


DEMPAR = BiasNotion.DEMOGRAPHIC_PARITY
EQOPP = BiasNotion.EQUAL_OPPORTUNITY


def _aligned(predictions, dataset: Dataset) -> np.ndarray:
    f = np.asarray(predictions, dtype=np.float64)
    if f.shape != (len(dataset),):
        raise AlignmentError(f"{f.shape[0] if f.ndim else 0} predictions for {len(dataset)} records")
    if not np.all((f >= 0.0) & (f <= 1.0)):
        raise ValidationError("predictions must lie in [0, 1]")
    return f


def positive_rate(predictions, dataset: Dataset, group: int) -> float:
    f = _aligned(predictions, dataset)
    m = dataset.groups == group
    if not m.any():
        raise UndefinedRateError(f"group {group} has no records")
    return float(f[m].sum() / m.sum())


def true_positive_rate(predictions, dataset: Dataset, group: int) -> float:
    f = _aligned(predictions, dataset)
    m = (dataset.groups == group) & (dataset.labels == 1)
    if not m.any():
        raise UndefinedRateError(f"group {group} has no positively labeled records")
    return float(f[m].sum() / m.sum())


def group_term(notion: BiasNotion, predictions, dataset: Dataset, group: int) -> float:
    """The per-group rate whose difference across groups is the bias."""
    if notion is DEMPAR:
        return positive_rate(predictions, dataset, group)
    return true_positive_rate(predictions, dataset, group)


def bias(notion: BiasNotion | str, predictions, dataset: Dataset) -> float:
    """Signed bias: group-1 rate minus group-2 rate."""
    notion = BiasNotion.parse(notion)
    return group_term(notion, predictions, dataset, 1) - group_term(notion, predictions, dataset, 2)


def misclassification_loss(predictions, dataset: Dataset) -> float:
    f = _aligned(predictions, dataset)
    y = dataset.labels
    return float(np.mean(y * (1.0 - f) + (1 - y) * f))


def group_error(predictions, dataset: Dataset, group: int) -> float:
    """Expected 0-1 error within one group."""
    f = _aligned(predictions, dataset)
    m = dataset.groups == group
    y = dataset.labels[m]
    return float(np.mean(y * (1.0 - f[m]) + (1 - y) * f[m]))
