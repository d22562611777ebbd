import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slack_audit.data import Dataset, random_dataset
from slack_audit.errors import SchemaError, SizeError
from slack_audit.gabos import (
    GabosConfig, GabosModel, GabosTrainer, QuantilePartition, TreePartition, gabos_fit, gabos_score, gabos_train,
    partition_fit,
)
from slack_audit.metrics import DEMPAR, EQOPP
from slack_audit.postproc import evaluate_policy, threshold_curves

from conftest import small_datasets
from properties import b_monotonicity_failures, convexity_defect, monotone_violations


def line(xs, labels, group=1, other=((0.0, 0), (1.0, 1))):
    x = list(xs) + [v for v, _ in other]
    g = [group] * len(xs) + [3 - group] * len(other)
    y = list(labels) + [lab for _, lab in other]
    return Dataset(np.array(x, float), np.array(g), np.array(y))


def test_partition_examples():
    ds = line([1, 2, 3, 4], [0, 1, 0, 1])
    assert partition_fit(ds, 1, max_cells=1).n_cells == 1
    q = partition_fit(ds, 1, max_cells=2, method="quantile")
    assert q.assign(np.array([[1.0], [2.0], [3.0], [4.0]])).tolist() == [0, 0, 1, 1]
    pure = line([1, 2, 3, 4], [1, 1, 1, 1])
    assert partition_fit(pure, 1, max_cells=8).n_cells == 1
    with pytest.raises(SizeError):
        partition_fit(ds, 1, min_cell=5)


def test_tree_split_rules():
    # labels change between 2 and 3: one split at the midpoint 2.5
    ds = line([1, 2, 3, 4], [0, 0, 1, 1])
    t = partition_fit(ds, 1, max_cells=8)
    assert t.nodes[0][:2] == (0, 2.5)
    assert t.n_cells == 2
    # two equally good features: the lower index wins
    x = np.array([[0, 0], [0, 0], [1, 1], [1, 1], [0, 0], [1, 1]], float)
    ds2 = Dataset(x, np.array([1, 1, 1, 1, 2, 2]), np.array([0, 0, 1, 1, 0, 1]))
    assert partition_fit(ds2, 1).nodes[0][0] == 0
    # min_cell rules out the pure split at 1.5; the next best is 2.5
    ds3 = line([1, 2, 3, 4, 5], [0, 1, 1, 1, 1])
    assert partition_fit(ds3, 1).nodes[0][:2] == (0, 1.5)
    assert partition_fit(ds3, 1, min_cell=2).nodes[0][:2] == (0, 2.5)
    assert partition_fit(ds3, 1, min_cell=3).n_cells == 1


def test_cell_scores_examples():
    ds = line([1, 1, 1, 1], [1, 1, 1, 0])
    m = gabos_fit(ds, GabosConfig(max_cells=4))
    assert m.cell_scores[1].tolist() == [0.75]
    allpos = line([1, 2, 3], [1, 1, 1])
    assert np.all(gabos_fit(allpos).cell_scores[1] == 1.0)
    base = gabos_fit(random_dataset(np.random.default_rng(1), 80), GabosConfig(max_cells=1))
    for g in (1, 2):
        assert len(base.cell_scores[g]) == 1


@given(small_datasets(max_n=60, max_dim=3), st.integers(1, 8), st.sampled_from(["tree", "quantile"]),
       st.integers(1, 3))
def test_partition_invariants_and_score_exactness(ds, cells, method, min_cell):
    cfg = GabosConfig(cells, method, min_cell)
    if min(ds.count(1), ds.count(2)) < min_cell:
        with pytest.raises(SizeError):
            gabos_fit(ds, cfg)
        return
    m = gabos_fit(ds, cfg)
    f = gabos_score(m)
    scores = f.scores(ds)
    for g in (1, 2):
        mask = ds.mask(g)
        cells_g = m.partitions[g].assign(ds.features[mask])
        assert cells_g.min() >= 0 and cells_g.max() < m.partitions[g].n_cells
        assert m.partitions[g].n_cells <= cells
        assert np.all(m.cell_counts[g] >= min_cell)
        # every cell's score is its exact positive fraction
        assert (m.cell_scores[g] * m.cell_counts[g]).sum() == pytest.approx(ds.labels[mask].sum(), abs=1e-9)
        for c in range(m.partitions[g].n_cells):
            in_c = cells_g == c
            assert scores[mask][in_c].tolist() == [ds.labels[mask][in_c].mean()] * int(in_c.sum())


@given(small_datasets(max_n=40, max_dim=2), st.integers(1, 4))
def test_threshold_half_is_bayes_optimal_over_cell_labelings(ds, cells):
    m = gabos_fit(ds, GabosConfig(cells))
    cell_ids = {g: m.partitions[g].assign(ds.features) for g in (1, 2)}
    rec_cell = np.where(ds.groups == 1, cell_ids[1], m.partitions[1].n_cells + cell_ids[2])
    total = m.partitions[1].n_cells + m.partitions[2].n_cells
    scores = gabos_score(m).scores(ds)
    ours = np.mean((scores >= 0.5) != ds.labels)
    best = min(np.mean(np.array(lab)[rec_cell] != ds.labels) for lab in itertools.product((0, 1), repeat=total))
    assert ours == pytest.approx(best, abs=1e-12)


def test_unseen_points_route_to_existing_cells():
    ds = random_dataset(np.random.default_rng(3), 120, 2)
    for method in ("tree", "quantile"):
        m = gabos_fit(ds, GabosConfig(6, method))
        f = gabos_score(m)
        far = np.array([[-100.0, 100.0], [100.0, -100.0], [0.123, 0.456]])
        s = f(far, np.array([1, 2, 2]))
        for v, g in zip(s, (1, 2, 2)):
            assert v in m.cell_scores[g]


def test_quantile_boundary_goes_low():
    p = QuantilePartition(np.array([0.5]))
    assert p.assign(np.array([[0.5], [0.50001], [-3.0], [9.0]])).tolist() == [0, 1, 0, 1]


@given(small_datasets(max_n=50, max_dim=3), st.sampled_from(["tree", "quantile"]))
def test_serialization_is_bit_exact(ds, method):
    m = gabos_fit(ds, GabosConfig(8, method))
    back = GabosModel.loads(m.dumps())
    assert back.dumps() == m.dumps()
    assert np.array_equal(gabos_score(back).scores(ds), gabos_score(m).scores(ds))


def test_loads_rejects_foreign_text():
    with pytest.raises(SchemaError):
        GabosModel.loads("linear-model 1\n")


def test_tree_assign_matches_manual_walk():
    t = TreePartition(((0, 0.5, 1, 2), (-1, np.nan, 0, -1), (1, 0.0, 3, 4), (-1, np.nan, 1, -1), (-1, np.nan, 2, -1)))
    x = np.array([[0.5, 9.0], [0.6, 0.0], [0.6, 0.1]])
    assert t.assign(x).tolist() == [0, 1, 2]
    assert t.n_cells == 3


def test_identical_groups_get_identical_thresholds():
    rng = np.random.default_rng(7)
    half = random_dataset(rng, 60, 2)
    x = np.vstack([half.features, half.features])
    y = np.concatenate([half.labels, half.labels])
    g = np.concatenate([np.ones(60, int), np.full(60, 2)])
    ds = Dataset(x, g, y)
    for notion in (DEMPAR, EQOPP):
        t = GabosTrainer(ds, notion, GabosConfig(6))
        for s in np.linspace(0, 0.5, 6):
            p = t.train(float(s))
            assert p.tau1.tau == pytest.approx(p.tau2.tau, abs=1e-12)


def test_gabos_train_matches_trainer_and_slack_one_is_unconstrained():
    ds = random_dataset(np.random.default_rng(11), 150, 2)
    t = GabosTrainer(ds, EQOPP, GabosConfig(5))
    p = gabos_train(ds, EQOPP, 0.05, GabosConfig(5))
    q = t.train(0.05)
    assert (p.tau1.tau, p.tau2.tau, p.loss) == (q.tau1.tau, q.tau2.tau, q.loss)
    # vacuous constraint: each group thresholds its score at 1/2
    free = t.train(1.0)
    s = t.score.scores(ds)
    assert free.loss == pytest.approx(np.mean((s >= 0.5) != ds.labels), abs=1e-12)


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.sampled_from(["dempar", "eqopp"]), st.sampled_from(["tree", "quantile"]))
def test_sweeps_are_slack_consistent(seed, notion, method):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, int(rng.integers(10, 201)), int(rng.integers(1, 4)))
    t = GabosTrainer(ds, notion, GabosConfig(int(rng.integers(1, 9)), method))
    slacks = np.linspace(0, float(rng.uniform(0.05, 1.0)), 11)
    pols = [t.train(float(s)) for s in slacks]
    P = np.array([evaluate_policy(p, ds) for p in pols])
    assert not monotone_violations(P, 1e-9).any()
    assert b_monotonicity_failures([p.b1 for p in pols], [p.b2 for p in pols]) == []
    # records sharing a cell share a prediction at every slack
    s = t.score.scores(ds)
    for g in (1, 2):
        for v in np.unique(s[ds.groups == g]):
            same = (ds.groups == g) & (s == v)
            assert np.all(P[:, same] == P[:, same][:, :1])


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.sampled_from(["tree", "quantile"]), st.integers(0, 2))
def test_error_is_convex_in_rate_and_tpr(seed, method, refinement):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, int(rng.integers(10, 201)), int(rng.integers(1, 4)))
    f = gabos_score(gabos_fit(ds, GabosConfig(int(rng.integers(1, 9)), method)))
    for notion in (DEMPAR, EQOPP):
        c = threshold_curves(ds, f, notion, refinement)
        for g in (1, 2):
            x = c[g].term[::-1]  # ascending rate / TPR
            y = c[g].loss[::-1]
            assert convexity_defect(x, y) >= -1e-9


def test_convexity_check_detects_a_raw_score_kink():
    # a raw score that ranks a negative block above a positive one is not
    # calibrated, and its error curve bends the wrong way
    x = np.array([0.9, 0.9, 0.1, 0.1, 0.5, 0.5])
    ds = Dataset(x, np.array([1, 1, 1, 1, 2, 2]), np.array([0, 0, 1, 1, 0, 1]))
    from slack_audit.postproc import RawColumn
    c = threshold_curves(ds, RawColumn(0), DEMPAR)
    assert convexity_defect(c[1].term[::-1], c[1].loss[::-1]) < 0
