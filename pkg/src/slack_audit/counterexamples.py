"""The two slack-inconsistency counterexamples and their exact oracles.

``thm1_*``: a continuous score distribution (non-Bayes-optimal score) on
which demographic-parity post-processing moves group 1's threshold down
and then jumps it up as slack grows.

``thm2_*``: four discrete score values per group with a Bayes-optimal
ordering; equal-opportunity post-processing with deterministic thresholds
picks a non-monotone path through the 25 threshold pairs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from slack_audit.data import GROUPS, Dataset, stratified_binary_sample
from slack_audit.errors import SizeError
from slack_audit.metrics import BiasNotion
from slack_audit.postproc import FEAS_TOL, RawColumn, ScoreFunction, ThresholdSearch


@dataclass(frozen=True)
class Segment:
    lo: float
    hi: float
    mass: Fraction
    p_positive: float


@dataclass(frozen=True)
class PiecewiseUniformSpec:
    """Per group, scores uniform within each segment; ``mass`` is the
    segment's share of the group."""

    groups: dict

    def __post_init__(self):
        for g, segs in self.groups.items():
            if sum(s.mass for s in segs) != 1:
                raise ValueError(f"group {g}: segment masses must sum to 1")
            for s in segs:
                if not (0 <= s.lo < s.hi <= 1):
                    raise ValueError(f"group {g}: bad segment [{s.lo}, {s.hi})")


def thm1_spec() -> PiecewiseUniformSpec:
    q = Fraction(1, 4)
    return PiecewiseUniformSpec({
        1: (Segment(0.0, 0.5, Fraction(1, 2), 0.6), Segment(0.5, 0.75, q, 0.0), Segment(0.75, 1.0, q, 1.0)),
        2: (Segment(0.0, 0.25, q, 0.0), Segment(0.25, 0.5, q, 1.0),
            Segment(0.5, 0.75, q, 1.0), Segment(0.75, 1.0, q, 0.0)),
    })


def thm1_error(spec: PiecewiseUniformSpec, group: int, t: float) -> float:
    """Exact error of ``1[R >= t]`` within the group."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    err = 0.0
    for s in spec.groups[group]:
        below = min(max((t - s.lo) / (s.hi - s.lo), 0.0), 1.0)
        err += float(s.mass) * (below * s.p_positive + (1.0 - below) * (1.0 - s.p_positive))
    return err


def thm1_dataset(spec: PiecewiseUniformSpec | None = None, n_per_group: int = 4000) -> Dataset:
    """Equispaced segment-interior scores, labels by stratified sampling.
    The score is the dataset's single feature."""
    spec = spec or thm1_spec()
    if n_per_group < 8:
        raise SizeError(f"n_per_group must be >= 8, got {n_per_group}")
    xs, gs, ys = [], [], []
    for g in GROUPS:
        for s in spec.groups[g]:
            c = s.mass * n_per_group
            if c.denominator != 1:
                raise SizeError(f"n_per_group={n_per_group} is not divisible by the mass denominator {s.mass.denominator}")
            c = int(c)
            xs.append(s.lo + (np.arange(c) + 0.5) * (s.hi - s.lo) / c)
            gs.append(np.full(c, g))
            ys.append(stratified_binary_sample(c, s.p_positive))
    return Dataset(np.concatenate(xs), np.concatenate(gs), np.concatenate(ys))


THM2_VALUES = (0.25, 0.5, 0.75, 1.0)
THM2_P_POSITIVE = {1: (0.15, 0.2, 0.525, 0.95), 2: (0.1, 0.2, 0.35, 0.45)}
THM2_PER_VALUE = 200


@dataclass(frozen=True)
class DiscreteScoreSpec:
    values: tuple = THM2_VALUES
    p_positive: dict = None
    per_value: int = THM2_PER_VALUE

    def __post_init__(self):
        if self.p_positive is None:
            object.__setattr__(self, "p_positive", dict(THM2_P_POSITIVE))
        for g, ps in self.p_positive.items():
            if len(ps) != len(self.values) or not all(0 <= p <= 1 for p in ps):
                raise ValueError(f"group {g}: need one probability in [0,1] per support value")


def thm2_dataset(spec: DiscreteScoreSpec | None = None) -> Dataset:
    """Each support value carries ``per_value`` records per group, of which
    exactly ``p * per_value`` are positive."""
    spec = spec or DiscreteScoreSpec()
    xs, gs, ys = [], [], []
    for g in GROUPS:
        for v, p in zip(spec.values, spec.p_positive[g]):
            xs.append(np.full(spec.per_value, v))
            gs.append(np.full(spec.per_value, g))
            ys.append(stratified_binary_sample(spec.per_value, p))
    return Dataset(np.concatenate(xs), np.concatenate(gs), np.concatenate(ys))


# ---------------------------------------------------------------------------
# exhaustive deterministic pair table


@dataclass(frozen=True, eq=False)
class PairTable:
    """``loss[i, j]``, ``bias[i, j]``, ``feasible[i, j]`` for group-1
    threshold ``tau1[i]`` and group-2 threshold ``tau2[j]`` (ascending)."""

    tau1: np.ndarray
    tau2: np.ndarray
    loss: np.ndarray
    bias: np.ndarray
    feasible: np.ndarray
    slack: float

    @property
    def shape(self):
        return self.loss.shape

    def display_loss(self) -> np.ndarray:
        """Loss with infeasible cells shown as 1."""
        return np.where(self.feasible, self.loss, 1.0)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau1_index", *range(len(self.tau2))])
        for i in range(len(self.tau1)):
            w.writerow([i, *(f"{self.loss[i, j]:.17g};{self.bias[i, j]:.17g};{int(self.feasible[i, j])}"
                             for j in range(len(self.tau2)))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def exhaustive_pair_table(
    dataset: Dataset, score: ScoreFunction | None, notion: BiasNotion | str, slack: float
) -> PairTable:
    search = ThresholdSearch(dataset, score or RawColumn(0), BiasNotion.parse(notion), "deterministic")
    g1, g2 = search.grids[1], search.grids[2]
    N = len(dataset)
    loss = (g1.error_num[:, None] + g2.error_num[None, :]) / N
    bias = g1.term[:, None] - g2.term[None, :]
    num = g1.term_num[:, None] * g2.term_den - g2.term_num[None, :] * g1.term_den
    feasible = np.abs(num) <= (slack + FEAS_TOL) * g1.term_den * g2.term_den
    return PairTable(g1.tau.copy(), g2.tau.copy(), loss, bias, feasible, float(slack))
