"""Exhaustive per-group threshold search over a fixed score function.

Each group's scores are grouped into blocks of equal value, sorted from
highest to lowest. A classifier on one group is described by a position
``u`` in ``[0, K]``: the top ``floor(u)`` blocks are positive and the next
block is positive with probability ``u - floor(u)``. The normalized
threshold ``tau`` is one minus the induced positive rate.

Within a group, loss and the bias term (positive rate, or true-positive
rate) are piecewise linear in ``tau`` with breaks at the attainable
deterministic rates. ``ThresholdSearch`` exploits that: in deterministic
mode it enumerates all pairs of attainable thresholds, and in normalized
mode it additionally visits every point where a constraint line
``b1 - b2 = c`` (``c`` in ``{-slack, 0, +slack}``) crosses a grid line,
which together are all vertices the lexicographic optimum can sit on.
Losses and biases of grid pairs are compared as exact integers.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from slack_audit.data import GROUPS, Dataset
from slack_audit.errors import InfeasibleError, StateError, UndefinedRateError
from slack_audit.metrics import DEMPAR, BiasNotion

# Feasibility slack and tie tolerance for comparisons that involve
# interpolated (non-grid) candidates.
FEAS_TOL = 1e-12
TIE_TOL = 1e-12

MODES = ("normalized", "deterministic")


# ---------------------------------------------------------------------------
# score functions


class ScoreFunction(abc.ABC):
    @abc.abstractmethod
    def __call__(self, features: np.ndarray, groups: np.ndarray) -> np.ndarray:
        """Scores for a batch of (features, group) rows."""

    def scores(self, dataset: Dataset) -> np.ndarray:
        return np.asarray(self(dataset.features, dataset.groups), dtype=np.float64)


@dataclass(frozen=True)
class RawColumn(ScoreFunction):
    column: int = 0

    def __call__(self, features, groups):
        return np.asarray(features, dtype=np.float64)[:, self.column]


@dataclass(frozen=True, eq=False)
class Affine(ScoreFunction):
    weights: np.ndarray
    offset: float = 0.0

    def __call__(self, features, groups):
        return np.asarray(features, dtype=np.float64) @ np.asarray(self.weights) + self.offset


@dataclass(frozen=True, eq=False)
class Tabular(ScoreFunction):
    """Score looked up per (cell, group); ``partitions[g].assign`` routes
    feature rows of group ``g`` to cell ids ``0..M_g-1``."""

    partitions: Mapping[int, object]
    cell_scores: Mapping[int, np.ndarray]

    def __post_init__(self):
        for g in GROUPS:
            s = np.asarray(self.cell_scores[g], dtype=np.float64)
            if np.any((s < 0) | (s > 1)):
                raise ValueError("tabular scores must lie in [0, 1]")

    def cells(self, features, groups) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        groups = np.asarray(groups)
        out = np.empty(len(groups), dtype=np.int64)
        for g in GROUPS:
            m = groups == g
            if m.any():
                out[m] = self.partitions[g].assign(features[m])
        return out

    def __call__(self, features, groups):
        groups = np.asarray(groups)
        cells = self.cells(features, groups)
        out = np.empty(len(groups), dtype=np.float64)
        for g in GROUPS:
            m = groups == g
            out[m] = np.asarray(self.cell_scores[g], dtype=np.float64)[cells[m]]
        return out


# ---------------------------------------------------------------------------
# per-group block structure


@dataclass(frozen=True, eq=False)
class GroupBlocks:
    """Distinct scores of one group, highest first, with record and
    positive-label counts per block."""

    group: int
    values: np.ndarray
    counts: np.ndarray
    positives: np.ndarray

    @classmethod
    def build(cls, scores: np.ndarray, labels: np.ndarray, group: int) -> "GroupBlocks":
        if len(scores) == 0:
            raise UndefinedRateError(f"group {group} has no records")
        vals, inv = np.unique(-np.asarray(scores, dtype=np.float64), return_inverse=True)
        counts = np.bincount(inv, minlength=len(vals)).astype(np.int64)
        pos = np.bincount(inv, weights=labels, minlength=len(vals)).round().astype(np.int64)
        return cls(group, -vals, counts, pos)

    @property
    def n_blocks(self) -> int:
        return len(self.values)

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    @property
    def n_positive(self) -> int:
        return int(self.positives.sum())

    def cum_counts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    def cum_positives(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.positives)])

    def cut(self, k: int) -> float:
        """Deterministic threshold keeping the top ``k`` blocks (predict
        positive iff score >= cut). Sentinels: +inf keeps none, -inf all."""
        if k <= 0:
            return math.inf
        if k >= self.n_blocks:
            return -math.inf
        return float(self.values[k - 1])

    def threshold_at(self, u: float, tau: float) -> "NormalizedThreshold":
        K = self.n_blocks
        u = min(max(float(u), 0.0), float(K))
        k = min(int(math.floor(u)), K)
        w = u - k
        if k >= K or w <= 0.0:
            t = self.cut(k)
            return NormalizedThreshold(tau, t, t, 1.0, self.group, u)
        return NormalizedThreshold(tau, self.cut(k + 1), self.cut(k), w, self.group, u)

    def realize(self, tau: float) -> "NormalizedThreshold":
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {tau}")
        cum = self.cum_counts()
        target = (1.0 - tau) * self.size
        k = int(np.searchsorted(cum, target, side="right")) - 1
        k = min(max(k, 0), self.n_blocks)
        if k >= self.n_blocks:
            return self.threshold_at(self.n_blocks, tau)
        w = (target - cum[k]) / self.counts[k]
        return self.threshold_at(k + min(max(w, 0.0), 1.0), tau)


@dataclass(frozen=True)
class NormalizedThreshold:
    """Mixture of two adjacent deterministic thresholds: with probability
    ``weight`` use ``t_low`` (more positives), otherwise ``t_high``.

    When the rate ``1 - tau`` is attainable deterministically,
    ``t_low == t_high`` and ``weight == 1``. ``position`` is the block
    position ``u`` the threshold was built from.
    """

    tau: float
    t_low: float
    t_high: float
    weight: float
    group: int
    position: float

    @property
    def is_deterministic(self) -> bool:
        return self.t_low == self.t_high

    def predict(self, scores: np.ndarray) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        lo = (s >= self.t_low).astype(np.float64)
        if self.is_deterministic:
            return lo
        hi = (s >= self.t_high).astype(np.float64)
        return self.weight * lo + (1.0 - self.weight) * hi


@dataclass(frozen=True, eq=False)
class GroupThresholdPolicy:
    score: ScoreFunction
    tau1: NormalizedThreshold | None
    tau2: NormalizedThreshold | None
    loss: float = math.nan
    bias: float = math.nan
    b1: float = math.nan
    b2: float = math.nan

    def threshold(self, group: int) -> NormalizedThreshold:
        t = self.tau1 if group == 1 else self.tau2
        if t is None:
            raise StateError(f"policy has no realized threshold for group {group}")
        return t

    def predict(self, features, groups) -> np.ndarray:
        groups = np.asarray(groups)
        s = np.asarray(self.score(features, groups), dtype=np.float64)
        out = np.empty(len(groups), dtype=np.float64)
        for g in GROUPS:
            m = groups == g
            out[m] = self.threshold(g).predict(s[m])
        return out


def evaluate_policy(policy: GroupThresholdPolicy, dataset: Dataset) -> np.ndarray:
    """Per-record probability of a positive prediction."""
    return policy.predict(dataset.features, dataset.groups)


# ---------------------------------------------------------------------------
# candidate grids


@dataclass(frozen=True, eq=False)
class GroupGrid:
    """Candidate thresholds for one group in ascending ``tau``.

    Integer numerators share the scale ``R = refinement + 1``:
    ``error_num / (R * n_g)`` is the within-group error,
    ``term_num / (R * term_den)`` the bias term.
    """

    blocks: GroupBlocks
    notion: BiasNotion
    scale: int
    tau: np.ndarray
    position: np.ndarray
    error_num: np.ndarray
    term_num: np.ndarray
    term_den: int

    @property
    def term(self) -> np.ndarray:
        return self.term_num / (self.scale * self.term_den)

    @property
    def group_error(self) -> np.ndarray:
        return self.error_num / (self.scale * self.blocks.size)


def _group_grid(blocks: GroupBlocks, notion: BiasNotion, refinement: int) -> GroupGrid:
    if refinement < 0:
        raise ValueError(f"refinement must be >= 0, got {refinement}")
    R = refinement + 1
    K = blocks.n_blocks
    n, P = blocks.size, blocks.n_positive
    if notion is not DEMPAR and P == 0:
        raise UndefinedRateError(f"group {blocks.group} has no positively labeled records")
    cc, cp = blocks.cum_counts(), blocks.cum_positives()
    # errors with the top k blocks positive: missed positives + kept negatives
    err = (P - cp) + (cc - cp)

    k = np.concatenate([np.repeat(np.arange(K), R), [K]])
    m = np.concatenate([np.tile(np.arange(R), K), [0]])
    nxt = np.minimum(k, K - 1)
    rate_num = R * cc[k] + m * blocks.counts[nxt]
    err_num = R * err[k] + m * (err[np.minimum(k + 1, K)] - err[k])
    if notion is DEMPAR:
        term_num, term_den = rate_num, n
    else:
        term_num, term_den = R * cp[k] + m * blocks.positives[nxt], P
    tau = (R * n - rate_num) / (R * n)
    position = k + m / R
    # ascending tau == descending number of positives
    rev = slice(None, None, -1)
    return GroupGrid(
        blocks, notion, R, tau[rev], position[rev], err_num[rev].astype(np.int64),
        term_num[rev].astype(np.int64), int(term_den),
    )


def _blocks_for(dataset: Dataset, score: ScoreFunction, group: int) -> GroupBlocks:
    s = score.scores(dataset)
    m = dataset.mask(group)
    return GroupBlocks.build(s[m], dataset.labels[m], group)


def candidate_taus(dataset: Dataset, score: ScoreFunction, group: int, refinement: int = 0) -> np.ndarray:
    """Every tau attainable by a deterministic threshold on the group, plus
    ``refinement`` equispaced taus between each adjacent pair."""
    # the bias notion does not affect the tau grid
    return _group_grid(_blocks_for(dataset, score, group), DEMPAR, refinement).tau.copy()


def realize_tau(dataset: Dataset, score: ScoreFunction, group: int, tau: float) -> NormalizedThreshold:
    """Mixture of adjacent deterministic thresholds with positive rate
    exactly ``1 - tau`` on the group's records."""
    return _blocks_for(dataset, score, group).realize(tau)


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True, eq=False)
class GroupCurve:
    group: int
    tau: np.ndarray
    loss: np.ndarray
    term: np.ndarray


@dataclass(frozen=True, eq=False)
class ThresholdCurves:
    """Within-group error ``L_g(tau)`` and bias term ``B_g(tau)`` on the
    candidate grid of each group."""

    notion: BiasNotion
    curves: Mapping[int, GroupCurve]

    def __getitem__(self, group: int) -> GroupCurve:
        return self.curves[group]


def threshold_curves(
    dataset: Dataset, score: ScoreFunction, notion: BiasNotion | str, refinement: int = 0
) -> ThresholdCurves:
    notion = BiasNotion.parse(notion)
    out = {}
    for g in GROUPS:
        grid = _group_grid(_blocks_for(dataset, score, g), notion, refinement)
        out[g] = GroupCurve(g, grid.tau, grid.group_error, grid.term)
    return ThresholdCurves(notion, out)


# ---------------------------------------------------------------------------
# search


def _lex_pick(loss, absbias, tau1, tau2) -> int:
    """Index of the lexicographic minimum of (loss, |bias|, tau1, tau2),
    treating differences below TIE_TOL as ties."""
    idx = np.arange(len(loss))
    for key in (loss, absbias, tau1):
        sub = key[idx]
        idx = idx[sub <= sub.min() + TIE_TOL]
    return int(idx[np.argmin(tau2[idx])])


@dataclass
class ThresholdSearch:
    """Reusable search state for one (dataset, score, notion, mode).

    Building it sorts all grid pairs once by (loss, |bias|, tau1, tau2);
    each :meth:`solve` is then a binary search plus, in normalized mode, a
    linear pass over the constraint-line vertices.
    """

    dataset: Dataset
    score: ScoreFunction
    notion: BiasNotion
    mode: str = "normalized"
    refinement: int = 0
    grids: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.notion = BiasNotion.parse(self.notion)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        refinement = self.refinement if self.mode == "normalized" else 0
        s = self.score.scores(self.dataset)
        self.grids = {}
        for g in GROUPS:
            m = self.dataset.mask(g)
            blocks = GroupBlocks.build(s[m], self.dataset.labels[m], g)
            self.grids[g] = _group_grid(blocks, self.notion, refinement)
        self._scale = refinement + 1
        self._prepare_pairs()

    # -- grid pairs, exact -------------------------------------------------

    def _prepare_pairs(self):
        g1, g2 = self.grids[1], self.grids[2]
        K1, K2 = len(g1.tau), len(g2.tau)
        D1, D2 = g1.term_den, g2.term_den
        self._bias_den = self._scale * D1 * D2
        e = g1.error_num[:, None] + g2.error_num[None, :]
        a = np.abs(g1.term_num[:, None] * D2 - g2.term_num[None, :] * D1)
        e_max, a_max = int(e.max()), int(a.max())
        if (e_max + 1) * (a_max + 1) * K1 * K2 < 2**63:
            key = e.ravel()
            key *= a_max + 1
            key += a.ravel()
            del e, a
            key *= K1
            key += np.repeat(np.arange(K1, dtype=np.int64), K2)
            key *= K2
            key += np.tile(np.arange(K2, dtype=np.int64), K1)
            key.sort()
            j = key % K2
            key //= K2
            i = key % K1
            key //= K1
            a_sorted = key % (a_max + 1)
            del key
        else:
            order = np.lexsort(
                (np.tile(np.arange(K2), K1), np.repeat(np.arange(K1), K2), a.ravel(), e.ravel())
            )
            i, j = order // K2, order % K2
            a_sorted = a.ravel()[order]
        # the first feasible pair in sorted order is the answer; it is the
        # first index where the running minimum of |bias| drops under slack
        self._pair_i = i
        self._pair_j = j
        self._prefix_min = np.minimum.accumulate(a_sorted)
        self._neg_prefix_min = -self._prefix_min

    def min_abs_bias(self) -> float:
        return float(self._prefix_min[-1]) / self._bias_den

    def _best_grid_pair(self, slack: float):
        limit = (slack + FEAS_TOL) * self._bias_den
        pos = int(np.searchsorted(self._neg_prefix_min, -limit, side="left"))
        if pos >= len(self._prefix_min):
            return None
        return int(self._pair_i[pos]), int(self._pair_j[pos])

    # -- constraint-line vertices (normalized mode) --------------------------

    @staticmethod
    def _cross(grid: GroupGrid, targets: np.ndarray):
        """For each target bias-term value, the point strictly inside a grid
        segment where the (non-increasing) term equals it."""
        term = grid.term
        pos = np.searchsorted(-term, -targets, side="right")
        ok = (pos > 0) & (pos < len(term))
        j = np.clip(pos - 1, 0, len(term) - 2)
        hi, lo = term[j], term[j + 1]
        ok &= (hi > targets) & (targets > lo)
        frac = np.where(ok, (hi - targets) / np.where(hi > lo, hi - lo, 1.0), 0.0)
        tau = grid.tau[j] + frac * (grid.tau[j + 1] - grid.tau[j])
        err = grid.error_num[j] + frac * (grid.error_num[j + 1] - grid.error_num[j])
        u = grid.position[j] + frac * (grid.position[j + 1] - grid.position[j])
        return ok, tau, err, u

    def _line_candidates(self, slack: float):
        g1, g2 = self.grids[1], self.grids[2]
        t1, t2 = g1.term, g2.term
        N = self._scale * len(self.dataset)
        cols = {k: [] for k in ("loss", "absbias", "tau1", "tau2", "u1", "u2")}
        offsets = (slack, -slack, 0.0) if slack > 0 else (0.0,)
        for c in offsets:
            # group-1 on its grid, group-2 on the line b2 = b1 - c
            ok, tau, err, u = self._cross(g2, t1 - c)
            if ok.any():
                cols["loss"].append((g1.error_num[ok] + err[ok]) / N)
                cols["absbias"].append(np.full(ok.sum(), abs(c)))
                cols["tau1"].append(g1.tau[ok])
                cols["tau2"].append(tau[ok])
                cols["u1"].append(g1.position[ok])
                cols["u2"].append(u[ok])
            # group-2 on its grid, group-1 on the line b1 = b2 + c
            ok, tau, err, u = self._cross(g1, t2 + c)
            if ok.any():
                cols["loss"].append((g2.error_num[ok] + err[ok]) / N)
                cols["absbias"].append(np.full(ok.sum(), abs(c)))
                cols["tau1"].append(tau[ok])
                cols["tau2"].append(g2.tau[ok])
                cols["u1"].append(u[ok])
                cols["u2"].append(g2.position[ok])
        if not cols["loss"]:
            return None
        return {k: np.concatenate(v) for k, v in cols.items()}

    # -- public ------------------------------------------------------------

    def solve(self, slack: float) -> GroupThresholdPolicy:
        if not slack >= 0:
            raise ValueError(f"slack must be >= 0, got {slack}")
        g1, g2 = self.grids[1], self.grids[2]
        N = self._scale * len(self.dataset)
        best = self._best_grid_pair(slack)
        lines = self._line_candidates(slack) if self.mode == "normalized" else None
        if best is None and lines is None:
            raise InfeasibleError(slack, self.min_abs_bias())

        if best is not None:
            i, j = best
            num = int(g1.term_num[i]) * g2.term_den - int(g2.term_num[j]) * g1.term_den
            grid_row = (
                (int(g1.error_num[i]) + int(g2.error_num[j])) / N,
                abs(num) / self._bias_den,
                g1.tau[i], g2.tau[j], g1.position[i], g2.position[j],
            )
        if lines is None:
            loss, _, tau1, tau2, u1, u2 = grid_row
        else:
            keys = ("loss", "absbias", "tau1", "tau2", "u1", "u2")
            if best is not None:
                lines = {k: np.concatenate([[grid_row[n]], lines[k]]) for n, k in enumerate(keys)}
            p = _lex_pick(lines["loss"], lines["absbias"], lines["tau1"], lines["tau2"])
            loss, tau1, tau2, u1, u2 = (lines[k][p] for k in ("loss", "tau1", "tau2", "u1", "u2"))

        th1 = g1.blocks.threshold_at(u1, float(tau1))
        th2 = g2.blocks.threshold_at(u2, float(tau2))
        b1 = _term_at(g1, th1.position)
        b2 = _term_at(g2, th2.position)
        return GroupThresholdPolicy(self.score, th1, th2, float(loss), b1 - b2, b1, b2)


def _term_at(grid: GroupGrid, u: float) -> float:
    """Bias term of a group classifier at block position ``u``."""
    blocks = grid.blocks
    k = min(int(math.floor(u)), blocks.n_blocks)
    w = u - k
    if grid.notion is DEMPAR:
        num = blocks.cum_counts()[k] + (w * blocks.counts[k] if k < blocks.n_blocks else 0.0)
    else:
        num = blocks.cum_positives()[k] + (w * blocks.positives[k] if k < blocks.n_blocks else 0.0)
    return float(num / grid.term_den)


def postprocess_search(
    dataset: Dataset,
    score: ScoreFunction,
    notion: BiasNotion | str,
    slack: float,
    mode: str = "normalized",
    refinement: int = 0,
) -> GroupThresholdPolicy:
    """Minimum-loss threshold pair with ``|bias| <= slack``, ties broken by
    lowest ``|bias|``, then lowest tau1, then lowest tau2."""
    return ThresholdSearch(dataset, score, notion, mode, refinement).solve(slack)
