"""Slack sweeps and per-individual slack-consistency checks.

An individual is consistent when its predictions, read in slack order, are
non-decreasing or non-increasing up to ``tolerance``. A violation is
certified by a witness triple ``i < j < k`` where ``p[j]`` sits more than
``tolerance`` above (or below) both ``p[i]`` and ``p[k]``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from slack_audit.data import GROUPS, Dataset
from slack_audit.errors import SlackAuditError, SweepError
from slack_audit.gabos import GabosConfig, GabosTrainer
from slack_audit.lagrange import TrainConfig, fit_lagrangian, group_prediction_summary
from slack_audit.metrics import BiasNotion, bias
from slack_audit.postproc import GroupThresholdPolicy, RawColumn, ScoreFunction, ThresholdSearch, evaluate_policy

TRAINERS = ("postproc", "gabos", "lagrangian")
DEFAULT_TOLERANCE = {"postproc": 1e-9, "gabos": 1e-9, "lagrangian": 1e-6}


@dataclass(frozen=True, eq=False)
class SlackSweep:
    trainer: str
    notion: BiasNotion
    slacks: np.ndarray
    predictions: np.ndarray  # (n_slacks, n_records)
    groups: np.ndarray
    artifacts: list  # one JSON-ready descriptor per slack
    dataset_fingerprint: str
    actual_bias: np.ndarray  # bias of the hard (>= 0.5) predictions, per slack

    @property
    def is_threshold_trainer(self) -> bool:
        return self.trainer in ("postproc", "gabos")


def parse_slacks(spec: str) -> np.ndarray:
    """``lo:hi:step`` (inclusive of ``hi`` up to rounding) or a comma list."""
    spec = spec.strip()
    if ":" in spec:
        lo, hi, step = (float(t) for t in spec.split(":"))
        if step <= 0:
            raise ValueError("slack step must be > 0")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return np.round(lo + step * np.arange(count), 12)
    return np.array([float(t) for t in spec.split(",") if t.strip()])


def _policy_artifact(slack: float, p: GroupThresholdPolicy) -> dict:
    out = {"slack": slack, "loss": p.loss, "bias": p.bias, "b1": p.b1, "b2": p.b2, "thresholds": []}
    for g in GROUPS:
        t = p.threshold(g)
        out["thresholds"].append({
            "group": g, "tau": t.tau, "t_low": t.t_low, "t_high": t.t_high, "weight": t.weight,
            "bias_term": p.b1 if g == 1 else p.b2,
        })
    return out


def run_sweep(
    trainer: str,
    dataset: Dataset,
    notion: BiasNotion | str,
    slacks: Sequence[float],
    config=None,
    *,
    score: ScoreFunction | None = None,
    mode: str = "normalized",
    refinement: int = 0,
    jobs: int = 1,
) -> SlackSweep:
    """Train once per slack and evaluate on every record of ``dataset``.

    ``config`` is a GabosConfig for ``gabos``, a TrainConfig for
    ``lagrangian`` and unused for ``postproc`` (which thresholds ``score``,
    default the first feature). GABOS fits its partition once per sweep;
    Lagrangian runs reuse the same seed at every slack.
    """
    if trainer not in TRAINERS:
        raise ValueError(f"trainer must be one of {TRAINERS}, got {trainer!r}")
    notion = BiasNotion.parse(notion)
    slacks = np.asarray(slacks, dtype=np.float64)
    if slacks.ndim != 1 or len(slacks) == 0:
        raise ValueError("need at least one slack")
    if np.any(slacks < 0) or np.any(np.diff(slacks) <= 0):
        raise ValueError("slacks must be non-negative and strictly increasing")

    if trainer == "lagrangian":
        cfg = config or TrainConfig()

        def one(s):
            st = fit_lagrangian(dataset, notion, float(s), cfg)
            m = st.model
            soft = m.soft(dataset.features, cfg.margin)
            summary = group_prediction_summary(m, dataset, cfg.margin)
            return soft, {
                "slack": float(s), "weights": m.weights.tolist(), "offset": m.offset,
                "lam_plus": st.lam_plus, "lam_minus": st.lam_minus,
                "group_soft": [summary[g][0] for g in GROUPS],
                "group_hard": [summary[g][1] for g in GROUPS],
            }
    else:
        try:
            if trainer == "gabos":
                search = GabosTrainer(dataset, notion, config or GabosConfig(), refinement).search
            else:
                search = ThresholdSearch(dataset, score or RawColumn(0), notion, mode, refinement)
        except SlackAuditError as e:
            raise SweepError(float(slacks[0]), e) from e

        def one(s):
            p = search.solve(float(s))
            return evaluate_policy(p, dataset), _policy_artifact(float(s), p)

    def guarded(s):
        try:
            return one(s)
        except SlackAuditError as e:
            raise SweepError(float(s), e) from e

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(guarded, slacks))
    else:
        results = [guarded(s) for s in slacks]

    preds = np.vstack([r[0] for r in results])
    hard = (preds >= 0.5).astype(np.float64)
    actual = np.array([bias(notion, h, dataset) for h in hard])
    return SlackSweep(trainer, notion, slacks.copy(), preds, dataset.groups.copy(),
                      [r[1] for r in results], dataset.fingerprint(), actual)


# ---------------------------------------------------------------------------
# consistency


def _extremes(p: np.ndarray):
    """Running min/max strictly before and strictly after each column."""
    inf = np.full(p.shape[:-1] + (1,), np.inf)
    pre_min = np.concatenate([inf, np.minimum.accumulate(p, axis=-1)[..., :-1]], axis=-1)
    pre_max = np.concatenate([-inf, np.maximum.accumulate(p, axis=-1)[..., :-1]], axis=-1)
    rev = p[..., ::-1]
    suf_min = np.concatenate([inf, np.minimum.accumulate(rev, axis=-1)[..., :-1]], axis=-1)[..., ::-1]
    suf_max = np.concatenate([-inf, np.maximum.accumulate(rev, axis=-1)[..., :-1]], axis=-1)[..., ::-1]
    return pre_min, pre_max, suf_min, suf_max


def turning_points(p: np.ndarray, tol: float) -> np.ndarray:
    """Boolean mask of columns that are the middle of some witness triple."""
    p = np.asarray(p, dtype=np.float64)
    pre_min, pre_max, suf_min, suf_max = _extremes(p)
    peak = (p - pre_min > tol) & (p - suf_min > tol)
    valley = (pre_max - p > tol) & (suf_max - p > tol)
    return peak | valley


def first_witness(p: Sequence[float], tol: float):
    """Lexicographically first violating triple of indices, or None."""
    p = np.asarray(p, dtype=np.float64)
    S = len(p)
    for i in range(S - 2):
        for j in range(i + 1, S - 1):
            later = p[j + 1:]
            if p[j] - p[i] > tol:
                hit = np.nonzero(p[j] - later > tol)[0]
            elif p[i] - p[j] > tol:
                hit = np.nonzero(later - p[j] > tol)[0]
            else:
                continue
            if len(hit):
                return i, j, j + 1 + int(hit[0])
    return None


def all_witnesses(p: Sequence[float], tol: float) -> list:
    p = np.asarray(p, dtype=np.float64)
    d = p[None, :] - p[:, None]  # d[a, b] = p[b] - p[a]
    up, down = d > tol, d < -tol
    out = []
    S = len(p)
    for j in range(1, S - 1):
        for i in range(j):
            for k in range(j + 1, S):
                if (up[i, j] and down[j, k]) or (down[i, j] and up[j, k]):
                    out.append((i, j, k))
    return sorted(out)


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    tolerance: float
    order: np.ndarray  # slack indices in the order checked
    violated: np.ndarray  # (n_records,) bool
    witnesses: dict  # record index -> list of (i, j, k) slack-index triples
    group_soft: dict  # group -> (n_slacks,) mean prediction, in slack order
    group_hard: dict  # group -> (n_slacks,) mean of predictions >= 0.5
    group_flags: dict  # group -> (n_slacks,) soft curve turning points

    @property
    def n_violations(self) -> int:
        return int(self.violated.sum())

    def violations_by_group(self, groups: np.ndarray) -> dict:
        return {g: int(self.violated[groups == g].sum()) for g in GROUPS}


def check_consistency(sweep: SlackSweep, tolerance: float | None = None, *,
                      order: Sequence[int] | None = None, full: bool = False) -> ConsistencyReport:
    """Per-record monotonicity in slack. ``order`` re-reads the sweep in a
    different slack order (e.g. sorted by actual bias); ``full`` lists every
    witness instead of only the first."""
    tol = DEFAULT_TOLERANCE[sweep.trainer] if tolerance is None else float(tolerance)
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    order = np.arange(len(sweep.slacks)) if order is None else np.asarray(order, dtype=np.int64)
    P = sweep.predictions[order].T  # (n_records, n_slacks)
    violated = turning_points(P, tol).any(axis=1) if P.shape[1] >= 3 else np.zeros(P.shape[0], bool)
    witnesses = {}
    for r in np.nonzero(violated)[0]:
        if full:
            trip = all_witnesses(P[r], tol)
        else:
            w = first_witness(P[r], tol)
            trip = [w] if w is not None else []
        witnesses[int(r)] = [tuple(int(order[t]) for t in w) for w in trip]

    soft, hard, flags = {}, {}, {}
    for g in GROUPS:
        m = sweep.groups == g
        soft[g] = sweep.predictions[:, m].mean(axis=1)
        hard[g] = (sweep.predictions[:, m] >= 0.5).mean(axis=1)
        flags[g] = turning_points(soft[g], tol)
    return ConsistencyReport(tol, order, violated, witnesses, soft, hard, flags)


# ---------------------------------------------------------------------------
# report emission


def _num(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _fmt(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def report_dict(report: ConsistencyReport, sweep: SlackSweep) -> dict:
    S = sweep.slacks
    violations = []
    for r, trips in sorted(report.witnesses.items()):
        violations.append({
            "index": r,
            "group": int(sweep.groups[r]),
            "witnesses": [
                {"slacks": [float(S[t]) for t in w], "predictions": [float(sweep.predictions[t, r]) for t in w]}
                for w in trips
            ],
        })
    curves = [
        {"slack": float(S[j]), "group": g, "avg_soft": float(report.group_soft[g][j]),
         "avg_hard": float(report.group_hard[g][j]), "flagged": bool(report.group_flags[g][j])}
        for j in range(len(S)) for g in GROUPS
    ]
    paths = []
    if sweep.is_threshold_trainer:
        for a in sweep.artifacts:
            for t in a["thresholds"]:
                paths.append({"slack": a["slack"], **{k: _num(v) if isinstance(v, float) else v for k, v in t.items()}})
    by_violation = sorted(range(len(S)), key=lambda j: (abs(sweep.actual_bias[j]), j))
    doc = {
        "trainer": sweep.trainer,
        "notion": sweep.notion.value,
        "slacks": [float(s) for s in S],
        "dataset_fingerprint": sweep.dataset_fingerprint,
        "tolerance": report.tolerance,
        "summary": {
            "individuals": int(len(sweep.groups)),
            "violations": report.n_violations,
            "violations_by_group": {str(g): c for g, c in report.violations_by_group(sweep.groups).items()},
        },
        "violations": violations,
        "group_curves": curves,
        "threshold_paths": paths,
        "actual_bias": [float(b) for b in sweep.actual_bias],
        "orderings": {"by_slack": list(range(len(S))), "by_actual_violation": by_violation},
    }
    if sweep.trainer == "lagrangian":
        doc["models"] = sweep.artifacts
        reordered = check_consistency(sweep, report.tolerance, order=by_violation)
        doc["summary"]["violations_by_actual_violation_order"] = reordered.n_violations
    return doc


def emit_report(report: ConsistencyReport, sweep: SlackSweep, format: str = "json") -> dict:
    """Serialized documents keyed by suggested file name.

    ``json`` gives ``report.json``; ``csv`` gives ``curves.csv`` and, for
    threshold trainers, ``thresholds.csv``.
    """
    if format == "json":
        return {"report.json": json.dumps(report_dict(report, sweep), indent=1) + "\n"}
    if format != "csv":
        raise ValueError(f"format must be 'json' or 'csv', got {format!r}")
    out = {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slack", "group", "avg_soft", "avg_hard", "flagged"])
    for j, s in enumerate(sweep.slacks):
        for g in GROUPS:
            w.writerow([_fmt(s), g, _fmt(report.group_soft[g][j]), _fmt(report.group_hard[g][j]),
                        int(report.group_flags[g][j])])
    out["curves.csv"] = buf.getvalue()
    if sweep.is_threshold_trainer:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slack", "group", "tau", "bias_term", "t_low", "t_high", "weight"])
        for a in sweep.artifacts:
            for t in a["thresholds"]:
                w.writerow([_fmt(a["slack"]), t["group"], _fmt(t["tau"]), _fmt(t["bias_term"]),
                            _fmt(t["t_low"]), _fmt(t["t_high"]), _fmt(t["weight"])])
        out["thresholds.csv"] = buf.getvalue()
    return out


def write_documents(docs: dict, paths: dict) -> None:
    """Write ``docs[name]`` to ``paths[name]`` for every name in ``paths``."""
    for name, path in paths.items():
        if path is None or name not in docs:
            continue
        try:
            Path(path).write_text(docs[name], encoding="utf-8")
        except OSError as e:
            raise SlackAuditError(f"cannot write {path}: {e.strerror or e}") from e
