from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slack_audit.counterexamples import (
    THM2_P_POSITIVE, DiscreteScoreSpec, PiecewiseUniformSpec, Segment, exhaustive_pair_table, thm1_dataset,
    thm1_error, thm1_spec, thm2_dataset,
)
from slack_audit.errors import SizeError
from slack_audit.metrics import EQOPP, true_positive_rate
from slack_audit.postproc import RawColumn, ThresholdSearch

from oracles import brute_force_deterministic

raw = RawColumn(0)


def dense_error(spec, group, t, points=100_000):
    """Error of 1[R >= t] on equispaced sample points, labels in expectation."""
    total = 0.0
    for s in spec.groups[group]:
        k = int(points * s.mass)
        r = s.lo + (np.arange(k) + 0.5) * (s.hi - s.lo) / k
        total += np.where(r >= t, 1 - s.p_positive, s.p_positive).sum()
    return total / points


def test_thm1_spec_matches_construction():
    spec = thm1_spec()
    assert sum(s.mass for s in spec.groups[1]) == 1
    assert [s.p_positive for s in spec.groups[2]] == [0.0, 1.0, 1.0, 0.0]
    assert sum(s.mass * Fraction(s.p_positive) for s in spec.groups[2]) == Fraction(1, 2)
    assert spec.groups[1][0] == Segment(0.0, 0.5, Fraction(1, 2), 0.6)
    with pytest.raises(ValueError):
        PiecewiseUniformSpec({1: (Segment(0.0, 0.5, Fraction(1, 3), 0.5),)})


@pytest.mark.parametrize("group,t,want", [(1, 0.25, 0.5), (1, 0.75, 0.3), (2, 0.25, 0.25)])
def test_thm1_error_examples(group, t, want):
    assert thm1_error(thm1_spec(), group, t) == pytest.approx(want, abs=1e-12)


def test_thm1_error_minima():
    spec = thm1_spec()
    ts = np.linspace(0, 1, 2001)
    for g, arg, val in [(1, 0.75, 0.3), (2, 0.25, 0.25)]:
        e = np.array([thm1_error(spec, g, t) for t in ts])
        assert e.min() == pytest.approx(val, abs=1e-12)
        assert ts[np.argmin(e)] == pytest.approx(arg, abs=1e-12)


def test_thm1_error_agrees_with_dense_sampling():
    spec = thm1_spec()
    for g in (1, 2):
        for t in np.linspace(0, 1, 41):
            assert abs(thm1_error(spec, g, t) - dense_error(spec, g, t)) <= 1e-3


def test_thm1_error_is_continuous_piecewise_linear():
    spec = thm1_spec()
    step = 1e-4
    ts = np.arange(0, 1 + step / 2, step)
    max_slope = 1.0  # |d error / dt| = density * |1 - 2p| <= 2 * 1/2 on every segment
    for g in (1, 2):
        e = np.array([thm1_error(spec, g, t) for t in ts])
        assert np.max(np.abs(np.diff(e))) < 2 * step * max_slope
        # second differences vanish away from the segment ends
        d2 = np.abs(np.diff(e, 2))
        kinks = {round(b, 6) for s in spec.groups[g] for b in (s.lo, s.hi)}
        interior = [i for i in range(len(d2)) if all(abs(ts[i + 1] - k) > 2 * step for k in kinks)]
        assert d2[interior].max() < 1e-12
    with pytest.raises(ValueError):
        thm1_error(spec, 1, 1.5)


def test_thm1_dataset_examples():
    small = thm1_dataset(n_per_group=40)
    seg = (small.groups == 1) & (small.features[:, 0] < 0.5)
    assert seg.sum() == 20 and small.labels[seg].sum() == 12
    with pytest.raises(SizeError):
        thm1_dataset(n_per_group=42)
    with pytest.raises(SizeError):
        thm1_dataset(n_per_group=4)


def test_thm1_dataset_tracks_the_oracle():
    ds = thm1_dataset(n_per_group=4000)
    spec = thm1_spec()
    for g in (1, 2):
        m = ds.groups == g
        r, y = ds.features[m, 0], ds.labels[m]
        for t in np.linspace(0, 1, 21):
            pred = r >= t
            assert abs(pred.mean() - (1 - t)) <= 1 / 4000 + 1e-12
            assert abs(np.mean(pred != y) - thm1_error(spec, g, t)) <= 0.01
    m = ds.groups == 1
    assert abs(np.mean((ds.features[m, 0] >= 0.75) != ds.labels[m]) - 0.3) <= 0.01


def thm1_path():
    ds = thm1_dataset(n_per_group=4000)
    s = ThresholdSearch(ds, raw, "dempar")
    slacks = np.round(np.arange(51) * 0.01, 12)
    return slacks, np.array([s.solve(float(b)).tau1.tau for b in slacks])


def test_thm1_threshold_path():
    slacks, tau1 = thm1_path()
    assert tau1[0] == pytest.approx(0.25, abs=0.01)
    inner = (slacks > 0) & (slacks < 0.25)
    assert np.all(np.diff(tau1[inner]) < 0)
    assert tau1[-1] == pytest.approx(0.75, abs=0.01)
    # non-monotone: falls, then climbs back past its starting value
    assert tau1.min() < tau1[0] < tau1[-1]


def test_thm1_tie_band_follows_lowest_tau1_rule():
    # For slack in [0.36, 0.5] the loss is flat along tau1 - tau2 = slack
    # with tau1 in [0.25 + slack, 0.75]; the lowest-tau1 rule picks the left end.
    slacks, tau1 = thm1_path()
    band = slacks >= 0.36
    assert np.allclose(tau1[band], 0.25 + slacks[band], atol=1 / 4000)


def test_thm2_dataset_examples():
    ds = thm2_dataset()
    top = (ds.groups == 1) & (ds.features[:, 0] == 1.0)
    assert top.sum() == 200 and ds.labels[top].sum() == 190
    assert ds.labels[ds.groups == 2].mean() == pytest.approx(1.1 / 4, abs=1e-15)
    f = ((ds.features[:, 0] >= 0.75) & (ds.groups == 1)).astype(float)
    assert true_positive_rate(f, ds, 1) == pytest.approx(1.475 / 1.825, abs=1e-15)
    for g, ps in THM2_P_POSITIVE.items():
        for v, p in zip((0.25, 0.5, 0.75, 1.0), ps):
            cell = (ds.groups == g) & (ds.features[:, 0] == v)
            assert ds.labels[cell].sum() == round(200 * p)
    with pytest.raises(ValueError):
        DiscreteScoreSpec(p_positive={1: (0.1, 0.2), 2: (0.1, 0.2)})


def test_thm2_tables():
    ds = thm2_dataset()
    assert exhaustive_pair_table(ds, raw, EQOPP, np.inf).feasible.all()
    t0 = exhaustive_pair_table(ds, raw, EQOPP, 0.0)
    assert t0.shape == (5, 5)
    feas = {(float(t0.tau1[i]), float(t0.tau2[j])) for i, j in zip(*np.nonzero(t0.feasible))}
    assert feas == {(0.0, 0.0), (1.0, 1.0)}
    assert np.all(t0.display_loss()[~t0.feasible] == 1.0)
    tpr1 = sorted(set(np.round(t0.bias[:, -1], 4)))
    assert tpr1 == [0.0, 0.5205, 0.8082, 0.9178, 1.0]
    tpr2 = sorted(set(np.round(-t0.bias[-1, :], 4)))
    assert tpr2 == [0.0, 0.4091, 0.7273, 0.9091, 1.0]


def test_thm2_table_csv_shape(tmp_path):
    t = exhaustive_pair_table(thm2_dataset(), raw, "eqopp", 0.4)
    text = t.to_csv(tmp_path / "t.csv")
    rows = text.strip().split("\n")
    assert rows[0] == "tau1_index,0,1,2,3,4"
    assert len(rows) == 6
    loss, b, feas = rows[1].split(",")[1].split(";")
    assert float(loss) == t.loss[0, 0] and float(b) == t.bias[0, 0] and feas in ("0", "1")
    assert (tmp_path / "t.csv").read_text() == text


def test_thm2_path_matches_brute_force():
    ds = thm2_dataset()
    search = ThresholdSearch(ds, raw, EQOPP, "deterministic")
    path = []
    for k in range(101):
        slack = Fraction(k, 100)
        p = search.solve(float(slack))
        want = brute_force_deterministic(ds, ds.features[:, 0], "eqopp", slack)
        assert (p.tau1.tau, p.tau2.tau) == (float(want[0]), float(want[1]))
        assert p.loss == pytest.approx(float(want[2]), abs=1e-15)
        path.append((p.tau1.tau, p.tau2.tau))
    t1 = [a for a, _ in path]
    assert not (all(np.diff(t1) >= 0) or all(np.diff(t1) <= 0))
    assert path[0] == (1.0, 1.0) and path[-1] == (0.5, 1.0)


@given(st.integers(1, 50).map(lambda k: 40 * k))
def test_thm1_dataset_sizes(n):
    ds = thm1_dataset(n_per_group=n)
    assert ds.count(1) == ds.count(2) == n
    assert np.all((ds.features >= 0) & (ds.features <= 1))
