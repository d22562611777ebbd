import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slack_audit.data import Dataset, Schema, load_csv, parse_key_values, random_dataset, stratified_binary_sample
from slack_audit.errors import SchemaError, SizeError, ValidationError

from conftest import small_datasets


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_four_rows_in_file_order(tmp_path):
    p = write(tmp_path, "x,group,label\n0.5,1,0\n1.5,1,1\n2.5,2,0\n3.5,2,1\n")
    ds = load_csv(p)
    assert len(ds) == 4
    assert ds.features[:, 0].tolist() == [0.5, 1.5, 2.5, 3.5]
    assert ds.groups.tolist() == [1, 1, 2, 2]
    assert ds.labels.tolist() == [0, 1, 0, 1]


def test_third_group_value_rejected(tmp_path):
    p = write(tmp_path, "x,group,label\n0,1,0\n1,2,1\n2,3,0\n")
    with pytest.raises(ValidationError, match="group value '3'"):
        load_csv(p)


def test_empty_group_rejected(tmp_path):
    p = write(tmp_path, "x,group,label\n0,1,0\n1,1,1\n")
    with pytest.raises(ValidationError, match="group 2 is empty"):
        load_csv(p)


def test_missing_column_is_schema_error(tmp_path):
    p = write(tmp_path, "x,grp,label\n0,1,0\n1,2,1\n")
    with pytest.raises(SchemaError):
        load_csv(p)
    with pytest.raises(SchemaError):
        load_csv(write(tmp_path, "x,group,label\n0,1,0\n1,2,1\n", "e.csv"), Schema(feature_columns=("nope",)))


def test_probability_label_rejected(tmp_path):
    p = write(tmp_path, "x,group,label\n0,1,0.6\n1,2,1\n")
    with pytest.raises(ValidationError, match="not binary"):
        load_csv(p)


def test_schema_file_with_encodings(tmp_path):
    cfg = write(tmp_path, "# adult-like\nfeatures = age, hours\ngroup_column = sex\nlabel_column = income\n"
                "group_1 = Male\ngroup_2 = Female\nlabel_0 = <=50K\nlabel_1 = >50K\n", "schema.cfg")
    data = write(tmp_path, "age,sex,hours,income,unused\n39,Male,40,<=50K,x\n50,Female,13,>50K,y\n"
                 " 38 , Female ,40, >50K ,z\n")
    ds = load_csv(data, Schema.from_file(cfg))
    assert ds.dim == 2
    assert ds.features.tolist() == [[39, 40], [50, 13], [38, 40]]
    assert ds.groups.tolist() == [1, 2, 2]
    assert ds.labels.tolist() == [0, 1, 1]


def test_schema_rejects_unknown_keys_and_bad_lines():
    with pytest.raises(SchemaError):
        Schema.from_mapping({"colour": "red"})
    with pytest.raises(SchemaError):
        parse_key_values("just words\n")
    assert parse_key_values("a = 1 # note\n\n b=x=y\n") == {"a": "1", "b": "x=y"}


def test_dataset_invariants():
    with pytest.raises(ValidationError):
        Dataset(np.zeros((3, 1)), np.array([1, 2, 2]), np.array([0, 1, 2]))
    with pytest.raises(ValidationError):
        Dataset(np.zeros((3, 1)), np.array([1, 2]), np.array([0, 1, 1]))
    with pytest.raises(ValidationError):
        Dataset(np.array([[np.nan], [0.0]]), np.array([1, 2]), np.array([0, 1]))
    ds = Dataset(np.zeros(2), np.array([1, 2]), np.array([0, 1]))
    assert ds.dim == 1
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


@given(small_datasets(both_labels=False))
def test_csv_round_trip(ds):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "x.csv"
        ds.to_csv(p)
        back = load_csv(p)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.groups, ds.groups)
    assert np.array_equal(back.labels, ds.labels)
    assert back.fingerprint() == ds.fingerprint()


def test_fingerprint_sensitive_to_content():
    a = Dataset(np.array([0.0, 1.0]), np.array([1, 2]), np.array([0, 1]))
    b = Dataset(np.array([0.0, 1.0]), np.array([1, 2]), np.array([1, 1]))
    assert a.fingerprint() != b.fingerprint()
    assert a.swap_groups().groups.tolist() == [2, 1]


@pytest.mark.parametrize("n,p,ones", [(10, 0.6, 6), (5, 0.0, 0), (4, 1.0, 4), (5, 0.5, 3), (3, 0.5, 2)])
def test_stratified_examples(n, p, ones):
    s = stratified_binary_sample(n, p)
    assert len(s) == n and s.sum() == ones
    assert np.array_equal(s, stratified_binary_sample(n, p))


def test_stratified_count_grid():
    # floor(n*p + 0.5): round half up
    for n in list(range(1, 200)) + [997, 4000, 10_000]:
        for p in np.linspace(0, 1, 101):
            s = stratified_binary_sample(n, p)
            assert s.sum() == int(np.floor(n * p + 0.5))
            assert set(np.unique(s)) <= {0, 1}


@given(st.integers(1, 500), st.floats(0, 1))
def test_stratified_spread_and_first_slot(n, p):
    s = stratified_binary_sample(n, p)
    k = s.sum()
    if 2 * k >= n and k > 0:
        assert s[0] == 1
    # evenly spread: every window of length w holds floor or ceil of w*k/n ones
    c = np.concatenate([[0], np.cumsum(s)])
    for w in (1, 2, 7):
        if w <= n:
            counts = c[w:] - c[:-w]
            assert counts.max() - counts.min() <= 1


def test_stratified_rejects_bad_input():
    with pytest.raises(SizeError):
        stratified_binary_sample(0, 0.5)
    with pytest.raises(ValueError):
        stratified_binary_sample(3, 1.5)


def test_random_dataset_is_seeded_and_valid():
    a = random_dataset(np.random.default_rng(5), 60, 3)
    b = random_dataset(np.random.default_rng(5), 60, 3)
    assert a.fingerprint() == b.fingerprint()
    for g in (1, 2):
        assert set(a.labels[a.mask(g)]) == {0, 1}
    with pytest.raises(SizeError):
        random_dataset(np.random.default_rng(0), 3)
