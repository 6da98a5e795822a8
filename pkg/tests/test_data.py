import gzip
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goad.data import (ARRHYTHMIA_ANOMALY_CLASSES, CATEGORICAL, CONTINUOUS, KDD_COLUMNS, LABEL,
                       RawTable,
                       DataError, EncodedDataset, Encoder, SplitSpec, TableSchema,
                       builtin_schema, dataset_from_table, encode, fit_normalization,
                       label_rules, load_dataset, load_encoded, load_table, save_encoded,
                       split, standardize, subsample_anomalies)

TOY_SCHEMA = TableSchema([("color", CATEGORICAL), ("size", CONTINUOUS), ("cls", LABEL)],
                         rule={"anomaly_values": ["bad"]})


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def toy_dataset(n_normal, n_anom, L=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_normal + n_anom, L))
    y = np.r_[np.zeros(n_normal, bool), np.ones(n_anom, bool)]
    return EncodedDataset(X, y, [f"x{i}" for i in range(L)], np.ones(L, bool))


# loading and encoding

def test_toy_csv_shape(tmp_path):
    path = write(tmp_path, "t.csv", "a,1.5,ok\nb,2.0,bad\na,3.0,ok\n")
    raw = load_table(path, TOY_SCHEMA)
    X, enc = encode(raw)
    assert raw.n_rows == 3 and X.shape == (3, 3)
    assert enc.feature_names == ["color=a", "color=b", "size"]
    np.testing.assert_array_equal(X[:, :2].sum(axis=1), 1.0)


def test_one_hot_block():
    schema = TableSchema([("c", CATEGORICAL), ("y", LABEL)])
    raw = RawTable(schema, {"c": ["a", "b", "c"], "y": ["0", "0", "0"]}, 3)
    X, _ = encode(raw)
    np.testing.assert_array_equal(X[1], [0.0, 1.0, 0.0])


def test_reencoding_is_bit_identical(tmp_path):
    path = write(tmp_path, "t.csv", "b,1.5,ok\na,2.0,bad\nc,?,ok\n")
    a, _ = encode(load_table(path, TOY_SCHEMA))
    b, _ = encode(load_table(path, TOY_SCHEMA))
    assert a.tobytes() == b.tobytes()


def test_missing_value_takes_training_median(tmp_path):
    path = write(tmp_path, "t.csv", "a,1.0,ok\na,?,ok\na,5.0,ok\na,2.0,ok\n")
    X, _ = encode(load_table(path, TOY_SCHEMA))
    assert X[1, -1] == 2.0


def test_unseen_category_gives_zero_block(tmp_path, caplog):
    train = load_table(write(tmp_path, "a.csv", "a,1,ok\nb,2,ok\n"), TOY_SCHEMA)
    test = load_table(write(tmp_path, "b.csv", "z,1,ok\n"), TOY_SCHEMA)
    enc = Encoder.fit(train)
    with caplog.at_level("WARNING"):
        X = enc.transform(test)
    np.testing.assert_array_equal(X[0], [0.0, 0.0, 1.0])
    assert "unseen" in caplog.text


def test_parse_error_reports_locus(tmp_path):
    path = write(tmp_path, "t.csv", "a,1,ok\nb,xyz,ok\n")
    with pytest.raises(DataError, match=r"t\.csv:2: column 1 \(size\)"):
        load_table(path, TOY_SCHEMA)
    path = write(tmp_path, "u.csv", "a,1\n")
    with pytest.raises(DataError, match="expected 3 fields"):
        load_table(path, TOY_SCHEMA)


def test_gzip_and_header(tmp_path):
    p = tmp_path / "t.csv.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("color,size,cls\na,1,ok\nb,2,bad\n")
    schema = TableSchema(TOY_SCHEMA.columns, header=True, rule=TOY_SCHEMA.rule)
    raw = load_table(str(p), schema)
    assert raw.n_rows == 2


def test_schema_needs_one_label():
    with pytest.raises(DataError):
        TableSchema([("a", CONTINUOUS)])
    with pytest.raises(DataError):
        TableSchema([("a", LABEL), ("b", LABEL)])


def test_schema_file_round_trip(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(TOY_SCHEMA.to_dict()))
    assert TableSchema.from_file(str(p)).columns == TOY_SCHEMA.columns


def test_kdd_schema_counts():
    kinds = [k for _, k in KDD_COLUMNS]
    assert len(KDD_COLUMNS) == 42  # 41 attributes and the label
    assert kinds.count(CONTINUOUS) == 34 and kinds.count(CATEGORICAL) == 7
    assert builtin_schema("kddrev").columns == builtin_schema("kdd").columns


def _kdd_line(proto, label, i):
    cells = ["0"] * 41
    cells[1], cells[2], cells[3] = proto, "http", "SF"
    cells[4] = str(100 + i)
    return ",".join(cells + [label])


def test_kdd_rows_encode(tmp_path):
    lines = [_kdd_line("tcp", "normal.", 0), _kdd_line("udp", "smurf.", 1), _kdd_line("icmp", "normal.", 2)]
    ds = load_dataset(write(tmp_path, "kdd.csv", "\n".join(lines) + "\n"), "kdd")
    assert ds.X.shape == (3, 34 + 3 + 1 + 1 + 1 + 1 + 1 + 1)
    np.testing.assert_array_equal(ds.y, [True, False, True])


def test_kddrev_subsample_count(tmp_path):
    lines = [_kdd_line("tcp", "normal.", i) for i in range(10)]
    lines += [_kdd_line("tcp", "neptune.", 10 + i) for i in range(20)]
    path = write(tmp_path, "kdd.csv", "\n".join(lines) + "\n")
    ds = load_dataset(path, "kddrev", seed=3)
    n_normal = int((~ds.y).sum())
    assert n_normal == 10 and ds.n_anomalies == round(0.25 * 10)


# label rules

def test_named_label_rules():
    arr = label_rules("arrhythmia")
    assert set(arr.anomaly_values) == {"3", "4", "5", "7", "8", "9", "14", "15"}
    np.testing.assert_array_equal(arr.is_anomaly(["1", "3", "15", "16"]), [False, True, True, False])
    np.testing.assert_array_equal(label_rules("thyroid").is_anomaly(["hyperfunction", "normal"]), [True, False])
    np.testing.assert_array_equal(label_rules("kdd").is_anomaly(["normal.", "smurf."]), [True, False])
    rev = label_rules("kddrev")
    np.testing.assert_array_equal(rev.is_anomaly(["normal.", "smurf."]), [False, True])
    assert rev.anomaly_ratio == 0.25
    assert ARRHYTHMIA_ANOMALY_CLASSES == arr.anomaly_values


def test_custom_rule_passes_through():
    rule = label_rules("anything", {"anomaly_values": ["x"], "invert": True})
    np.testing.assert_array_equal(rule.is_anomaly(["x", "y"]), [False, True])


def test_unknown_dataset_rejected():
    with pytest.raises(DataError):
        label_rules("mystery")


def test_subsample_anomalies():
    y = np.r_[np.zeros(8, bool), np.ones(10, bool)]
    rows = subsample_anomalies(y, 0.25, seed=0)
    assert y[rows].sum() == 2 and (~y[rows]).sum() == 8
    with pytest.raises(DataError):
        subsample_anomalies(y, 2.0, seed=0)


# splitting

def test_split_counts():
    s = split(toy_dataset(10, 4), SplitSpec())
    assert s.X_train.shape[0] == 5 and s.X_test.shape[0] == 9
    assert not s.y_train.any() and s.n_test_anomalies == 4


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(1, 30), st.integers(0, 10**6),
       st.floats(0.0, 0.3))
def test_split_disjoint_and_complete(n_normal, n_anom, seed, c):
    ds = toy_dataset(n_normal, n_anom)
    n_train = min(max(int(round(0.5 * n_normal)), 1), n_normal - 1)
    need = int(round(c * n_train / (1 - c)))
    if need >= n_anom:
        with pytest.raises(DataError):
            split(ds, SplitSpec(seed=seed, contamination_fraction=c))
        return
    s = split(ds, SplitSpec(seed=seed, contamination_fraction=c))
    assert not set(s.train_idx) & set(s.test_idx)
    assert len(s.train_idx) + len(s.test_idx) == n_normal + n_anom
    assert s.y_train.sum() == need
    assert s.n_test_anomalies >= 1
    if c == 0:
        assert not s.y_train.any()


def test_contamination_share_of_training_rows():
    ds = toy_dataset(200, 60)
    s = split(ds, SplitSpec(seed=1, contamination_fraction=0.05))
    assert s.y_train.mean() == pytest.approx(0.05, abs=0.005)


def test_zero_contamination_reproduces_clean_split():
    ds = toy_dataset(30, 5)
    a = split(ds, SplitSpec(seed=4))
    b = split(ds, SplitSpec(seed=4, contamination_fraction=0.0))
    np.testing.assert_array_equal(a.train_idx, b.train_idx)


def test_split_needs_two_normals():
    with pytest.raises(DataError):
        split(toy_dataset(1, 3), SplitSpec())


def test_fraction_validation():
    with pytest.raises(ValueError):
        SplitSpec(train_fraction_of_normals=1.5)


# normalization

def test_constant_column_maps_to_zero():
    train = np.array([[1.0, 5.0], [3.0, 5.0]])
    tr, te, _ = standardize(train, np.array([[2.0, 5.0]]))
    np.testing.assert_array_equal(tr[:, 1], 0.0)
    assert te[0, 1] == 0.0


def test_test_uses_train_statistics():
    rng = np.random.default_rng(0)
    train, test = rng.normal(3, 2, (50, 3)), rng.normal(size=(5, 3))
    _, te, stats = standardize(train, test)
    np.testing.assert_allclose(te, (test - train.mean(0)) / train.std(0), rtol=1e-14)


@pytest.mark.parametrize("mode", ["zscore", "minmax", "none"])
def test_normalization_round_trip(mode):
    rng = np.random.default_rng(1)
    X = rng.normal(100, 30, (40, 4))
    stats = fit_normalization(X, mode=mode)
    np.testing.assert_allclose(stats.invert(stats.apply(X)), X, rtol=0, atol=1e-12)


def test_categorical_columns_untouched():
    X = np.array([[1.0, 10.0], [0.0, 30.0]])
    tr, _, _ = standardize(X, X, continuous_mask=np.array([False, True]))
    np.testing.assert_array_equal(tr[:, 0], X[:, 0])


def test_minmax_range():
    X = np.random.default_rng(0).normal(size=(20, 3))
    Z = fit_normalization(X, mode="minmax").apply(X)
    np.testing.assert_allclose(Z.min(0), 0.0, atol=1e-15)
    np.testing.assert_allclose(Z.max(0), 1.0, atol=1e-15)


# cache and array files

def test_encoded_cache_round_trip(tmp_path):
    path = write(tmp_path, "t.csv", "a,1.5,ok\nb,2.0,bad\na,3.0,ok\n")
    ds = dataset_from_table(load_table(path, TOY_SCHEMA), label_rules("custom", TOY_SCHEMA.rule))
    out = str(tmp_path / "t.gdat")
    save_encoded(out, ds)
    back = load_encoded(out)
    assert back.X.tobytes() == ds.X.tobytes()
    np.testing.assert_array_equal(back.y, ds.y)
    assert back.feature_names == ds.feature_names
    assert back.encoder.fingerprint() == ds.encoder.fingerprint()
    assert load_dataset(out, "custom").X.tobytes() == ds.X.tobytes()


def test_cache_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.gdat"
    p.write_bytes(b"not a cache")
    with pytest.raises(DataError):
        load_encoded(str(p))


def test_mat_and_npz(tmp_path):
    from scipy.io import savemat
    X = np.arange(12.0).reshape(4, 3)
    y = np.array([[0], [1], [0], [0]])
    savemat(str(tmp_path / "d.mat"), {"X": X, "y": y})
    np.savez(str(tmp_path / "d.npz"), X=X, y=y.ravel())
    for name in ("d.mat", "d.npz"):
        ds = load_dataset(str(tmp_path / name), "thyroid")
        np.testing.assert_array_equal(ds.X, X)
        np.testing.assert_array_equal(ds.y, [False, True, False, False])
