"""Group-aware Bayes-optimal scores (GABOS) and GABOS learning.

Each group gets its own partition of feature space (a greedy Gini tree or
equal-frequency bins on the first feature); a record's score is the
positive fraction of its group's training records in its cell. Thresholds
are then chosen by normalized post-processing on that score.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from slack_audit.data import GROUPS, Dataset
from slack_audit.errors import SchemaError, SizeError, StateError
from slack_audit.metrics import BiasNotion
from slack_audit.postproc import GroupThresholdPolicy, Tabular, ThresholdSearch

METHODS = ("tree", "quantile")
_GAIN_TOL = 1e-12


@dataclass(frozen=True)
class GabosConfig:
    max_cells: int = 8
    method: str = "tree"
    min_cell: int = 1

    def __post_init__(self):
        if self.max_cells < 1:
            raise ValueError(f"max_cells must be >= 1, got {self.max_cells}")
        if self.min_cell < 1:
            raise ValueError(f"min_cell must be >= 1, got {self.min_cell}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True, eq=False)
class TreePartition:
    """Axis-aligned binary tree. ``nodes[i]`` is ``(feature, threshold, left,
    right)`` for a split (rows with ``x[feature] <= threshold`` go left) or
    ``(-1, nan, cell, -1)`` for a leaf."""

    nodes: tuple

    @property
    def n_cells(self) -> int:
        return sum(1 for f, _, _, _ in self.nodes if f < 0)

    def assign(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        node = np.zeros(len(x), dtype=np.int64)
        out = np.full(len(x), -1, dtype=np.int64)
        active = np.arange(len(x))
        while len(active):
            nxt = []
            for nid in np.unique(node[active]):
                rows = active[node[active] == nid]
                f, t, left, right = self.nodes[nid]
                if f < 0:
                    out[rows] = left
                    continue
                go_left = x[rows, f] <= t
                node[rows[go_left]] = left
                node[rows[~go_left]] = right
                nxt.append(rows)
            active = np.concatenate(nxt) if nxt else np.empty(0, dtype=np.int64)
        return out


@dataclass(frozen=True, eq=False)
class QuantilePartition:
    """Bins on the first feature split at ``boundaries``; a value equal to a
    boundary falls in the lower bin. Values outside the training range land
    in the first or last bin."""

    boundaries: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.boundaries) + 1

    def assign(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)[:, 0]
        return np.searchsorted(np.asarray(self.boundaries), x, side="left").astype(np.int64)


def _gini(pos, n):
    """Unnormalized Gini impurity n * (1 - p^2 - (1-p)^2)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, 2.0 * pos * (n - pos) / np.where(n > 0, n, 1), 0.0)


def _best_split(x: np.ndarray, y: np.ndarray, min_cell: int):
    """Best (gain, feature, threshold) over midpoint splits, ties to lowest
    feature then lowest threshold; None if nothing reduces impurity."""
    n = len(y)
    parent = float(_gini(np.float64(y.sum()), np.float64(n)))
    best = None
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        xs, ys = x[order, f], y[order]
        cut = np.nonzero(xs[1:] > xs[:-1])[0] + 1  # left size at each cut
        cut = cut[(cut >= min_cell) & (n - cut >= min_cell)]
        if len(cut) == 0:
            continue
        cp = np.cumsum(ys)
        pl = cp[cut - 1].astype(np.float64)
        nl = cut.astype(np.float64)
        gain = parent - _gini(pl, nl) - _gini(cp[-1] - pl, n - nl)
        j = int(np.argmax(gain >= gain.max() - _GAIN_TOL))
        if gain[j] <= _GAIN_TOL:
            continue
        if best is None or gain[j] > best[0] + _GAIN_TOL:
            thr = 0.5 * (xs[cut[j] - 1] + xs[cut[j]])
            best = (float(gain[j]), f, float(thr))
    return best


def _fit_tree(x: np.ndarray, y: np.ndarray, max_cells: int, min_cell: int) -> TreePartition:
    # best-first growth over leaves identified by creation id
    splits = {}  # id -> (feature, thr, left id, right id)
    order = [0]  # current leaves, left to right
    rows_by_id = {0: np.arange(len(y))}
    cache = {}
    next_id = 1
    while len(order) < max_cells:
        best_id, best = None, None
        for lid in order:
            if lid not in cache:
                r = rows_by_id[lid]
                cache[lid] = _best_split(x[r], y[r], min_cell)
            cand = cache[lid]
            if cand is not None and (best is None or cand[0] > best[0] + _GAIN_TOL):
                best_id, best = lid, cand
        if best is None:
            break
        _, f, thr = best
        r = rows_by_id.pop(best_id)
        left, right = next_id, next_id + 1
        next_id += 2
        go_left = x[r, f] <= thr
        rows_by_id[left], rows_by_id[right] = r[go_left], r[~go_left]
        splits[best_id] = (f, thr, left, right)
        i = order.index(best_id)
        order[i:i + 1] = [left, right]

    # renumber: nodes in preorder, cells left to right
    nodes, cell = [], 0

    def emit(lid):
        nonlocal cell
        me = len(nodes)
        nodes.append(None)
        if lid in splits:
            f, thr, left, right = splits[lid]
            li = emit(left)
            ri = emit(right)
            nodes[me] = (f, thr, li, ri)
        else:
            nodes[me] = (-1, float("nan"), cell, -1)
            cell += 1
        return me

    emit(0)
    return TreePartition(tuple(nodes))


def _fit_quantile(x0: np.ndarray, max_cells: int, min_cell: int) -> QuantilePartition:
    xs = np.sort(x0)
    n = len(xs)
    m = max(1, min(max_cells, n // min_cell))
    cuts = sorted({int(round(k * n / m)) for k in range(1, m)})
    cuts = [c for c in cuts if 0 < c < n and xs[c - 1] < xs[c]]
    # drop boundaries around bins smaller than min_cell, smallest bin first
    while cuts:
        edges = [0, *cuts, n]
        sizes = np.diff(edges)
        small = int(np.argmin(sizes))
        if sizes[small] >= min_cell:
            break
        if small == 0:
            drop = 0
        elif small == len(sizes) - 1:
            drop = len(cuts) - 1
        else:
            drop = small - 1 if sizes[small - 1] <= sizes[small + 1] else small
        del cuts[drop]
    bounds = np.array([0.5 * (xs[c - 1] + xs[c]) for c in cuts], dtype=np.float64)
    return QuantilePartition(bounds)


def partition_fit(
    dataset: Dataset, group: int, max_cells: int = 8, method: str = "tree", min_cell: int = 1
):
    """Partition one group's feature space; every cell holds at least
    ``min_cell`` of the group's records."""
    cfg = GabosConfig(max_cells, method, min_cell)
    m = dataset.mask(group)
    n = int(m.sum())
    if n < cfg.min_cell:
        raise SizeError(f"group {group} has {n} records, fewer than min_cell={cfg.min_cell}")
    x, y = dataset.features[m], dataset.labels[m]
    if cfg.method == "tree":
        return _fit_tree(x, y, cfg.max_cells, cfg.min_cell)
    return _fit_quantile(x[:, 0], cfg.max_cells, cfg.min_cell)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True, eq=False)
class GabosModel:
    partitions: dict
    cell_counts: dict
    cell_positives: dict
    config: GabosConfig = GabosConfig()

    @property
    def cell_scores(self) -> dict:
        return {g: self.cell_positives[g] / self.cell_counts[g] for g in GROUPS}

    def score_function(self) -> Tabular:
        return Tabular(self.partitions, self.cell_scores)

    def dumps(self) -> str:
        lines = ["gabos-model 1", "config " + " ".join(f"{k}={v}" for k, v in asdict(self.config).items())]
        for g in GROUPS:
            p = self.partitions[g]
            if isinstance(p, TreePartition):
                lines.append(f"group {g} tree {len(p.nodes)}")
                for i, (f, t, left, right) in enumerate(p.nodes):
                    if f < 0:
                        lines.append(f"node {i} leaf {left}")
                    else:
                        lines.append(f"node {i} split {f} {t:.17g} {left} {right}")
            else:
                lines.append(f"group {g} quantile {len(p.boundaries)}")
                lines.append("bounds " + " ".join(f"{b:.17g}" for b in p.boundaries))
            lines.append("counts " + " ".join(str(int(c)) for c in self.cell_counts[g]))
            lines.append("positives " + " ".join(str(int(c)) for c in self.cell_positives[g]))
            lines.append("scores " + " ".join(f"{s:.17g}" for s in self.cell_scores[g]))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "GabosModel":
        lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != ["gabos-model", "1"]:
            raise SchemaError("not a gabos-model v1 document")
        cfg = dict(kv.split("=", 1) for kv in lines[1][1:])
        config = GabosConfig(int(cfg["max_cells"]), cfg["method"], int(cfg["min_cell"]))
        parts, counts, pos = {}, {}, {}
        i = 2
        while i < len(lines):
            _, g, kind, size = lines[i]
            g, size = int(g), int(size)
            i += 1
            if kind == "tree":
                nodes = []
                for tok in lines[i:i + size]:
                    if tok[2] == "leaf":
                        nodes.append((-1, float("nan"), int(tok[3]), -1))
                    else:
                        nodes.append((int(tok[3]), float(tok[4]), int(tok[5]), int(tok[6])))
                parts[g] = TreePartition(tuple(nodes))
                i += size
            else:
                parts[g] = QuantilePartition(np.array([float(t) for t in lines[i][1:]]))
                i += 1
            counts[g] = np.array([int(t) for t in lines[i][1:]], dtype=np.int64)
            pos[g] = np.array([int(t) for t in lines[i + 1][1:]], dtype=np.int64)
            i += 3  # the scores line is derived, not trusted
        return cls(parts, counts, pos, config)

    @classmethod
    def load(cls, path: str | Path) -> "GabosModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def gabos_fit(dataset: Dataset, config: GabosConfig | None = None) -> GabosModel:
    """Fit one partition per group on that group's records and store each
    cell's exact positive fraction."""
    config = config or GabosConfig()
    parts, counts, pos = {}, {}, {}
    for g in GROUPS:
        p = partition_fit(dataset, g, config.max_cells, config.method, config.min_cell)
        m = dataset.mask(g)
        cells = p.assign(dataset.features[m])
        counts[g] = np.bincount(cells, minlength=p.n_cells).astype(np.int64)
        pos[g] = np.bincount(cells, weights=dataset.labels[m], minlength=p.n_cells).round().astype(np.int64)
        if np.any(counts[g] == 0):
            raise StateError(f"group {g}: partition produced an empty cell")
        parts[g] = p
    return GabosModel(parts, counts, pos, config)


def gabos_score(model: GabosModel) -> Tabular:
    return model.score_function()


class GabosTrainer:
    """GABOS learning for a whole slack sweep: the partition and the
    threshold search are built once and shared by every slack."""

    def __init__(self, dataset: Dataset, notion: BiasNotion | str, config: GabosConfig | None = None,
                 refinement: int = 0):
        self.model = gabos_fit(dataset, config)
        self.score = gabos_score(self.model)
        self.search = ThresholdSearch(dataset, self.score, BiasNotion.parse(notion), "normalized", refinement)

    def train(self, slack: float) -> GroupThresholdPolicy:
        return self.search.solve(slack)


def gabos_train(dataset: Dataset, notion: BiasNotion | str, slack: float,
                config: GabosConfig | None = None) -> GroupThresholdPolicy:
    return GabosTrainer(dataset, notion, config).train(slack)
