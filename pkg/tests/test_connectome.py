import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfcgan.connectome import (Connectome, DatasetManifest, Domain, Subject, ValidationError, denormalize_sc,
                               load_connectome, load_manifest, normalize_sc, save_connectome, symmetrize,
                               threshold_binary, top_edges, validate, vectorize_upper, write_manifest)

from conftest import random_fc, random_sc


def write_csv(path, m):
    np.savetxt(path, np.asarray(m), delimiter=",")
    return path


def test_load_accepts_valid_fc(tmp_path):
    c = load_connectome(write_csv(tmp_path / "a.csv", [[1, 0.5], [0.5, 1]]), "FC")
    assert c.n == 2 and np.array_equal(c.values, [[1, 0.5], [0.5, 1]])


@pytest.mark.parametrize("matrix,domain", [
    ([[1, 0.9], [0.1, 1]], "FC"),              # asymmetric
    ([[1, 1.5], [1.5, 1]], "FC"),              # out of range
    ([[0, -0.1], [-0.1, 0]], "SC"),            # negative SC
    ([[1, float("nan")], [float("nan"), 1]], "FC"),
    ([[1, 0.2, 0.1], [0.2, 1, 0.3]], "FC"),    # non-square
])
def test_load_rejects_invalid(tmp_path, matrix, domain):
    with pytest.raises(ValidationError):
        load_connectome(write_csv(tmp_path / "bad.csv", matrix), domain)


def test_load_dimension_mismatch(tmp_path):
    with pytest.raises(ValidationError):
        load_connectome(write_csv(tmp_path / "a.csv", np.eye(3)), "FC", expected_n=4)


def test_tiny_asymmetry_is_absorbed():
    m = np.array([[1, 0.5], [0.5 + 5e-7, 1]])
    c = validate(m, "FC")
    assert np.array_equal(c.values, c.values.T)


def test_fc_boundary_tolerance():
    c = validate([[1, 1 + 5e-7], [1 + 5e-7, 1]], "FC")
    assert c.values.max() <= 1.0


def test_diagonals_are_forced():
    assert np.array_equal(np.diag(validate([[0.3, 0.2], [0.2, 0.1]], "FC").values), [1, 1])
    assert np.array_equal(np.diag(validate([[0.3, 0.2], [0.2, 0.1]], "SC").values), [0, 0])


@given(st.integers(2, 12), st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_save_load_roundtrip(n, seed):
    import tempfile
    from pathlib import Path
    c = random_fc(n, np.random.default_rng(seed))
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "c.csv"
        save_connectome(c, p)
        back = load_connectome(p, "FC")
        lines = p.read_text().splitlines()
    assert len(lines) == n and all(len(l.split(",")) == n for l in lines)
    assert np.max(np.abs(back.values - c.values)) <= 1e-8


def test_save_unwritable(tmp_path):
    c = random_fc(3, np.random.default_rng(0))
    with pytest.raises(OSError):
        save_connectome(c, tmp_path / "missing" / "dir" / "c.csv")


def test_symmetrize_examples():
    assert np.array_equal(symmetrize(np.array([[0, 2], [0, 0]])), [[0, 1], [1, 0]])
    m = np.random.default_rng(1).random((10, 10))
    s = symmetrize(m)
    assert np.max(np.abs(s - s.T)) == 0
    assert np.array_equal(symmetrize(s), s)
    with pytest.raises(ValidationError):
        symmetrize(np.zeros((2, 3)))


def test_normalize_sc_examples():
    c, used = normalize_sc(np.zeros((3, 3)))
    assert not c.values.any()
    c, used = normalize_sc(np.array([[0, 3], [3, 0]]), 3)
    assert c.values[0, 1] == 1.0 and used == 3
    assert denormalize_sc(c, 3)[0, 1] == pytest.approx(3.0)
    with pytest.raises(ValidationError):
        normalize_sc(np.array([[0, -1], [-1, 0]]))
    with pytest.raises(ValidationError):
        normalize_sc(np.array([[0, 1], [1, 0]]), -2)
    with pytest.raises(ValidationError):
        denormalize_sc(random_fc(3, np.random.default_rng(0)), 3)


@given(st.integers(2, 10), st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_sc_normalization_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    raw = np.round(rng.lognormal(3, 1, (n, n)))
    raw = np.triu(raw, 1)
    raw = raw + raw.T
    c, sc_max = normalize_sc(raw)
    assert c.values.min() >= 0 and c.values.max() <= 1
    np.testing.assert_allclose(denormalize_sc(c, sc_max), raw, rtol=1e-6, atol=1e-9)


def test_threshold_examples():
    m = np.array([[1, 0.9, 0.1], [0.9, 1, -0.8], [0.1, -0.8, 1]])
    c = Connectome(m, Domain.FC)
    g = threshold_binary(c, "proportional", 2 / 3)
    assert g.n_edges == 2 and g.adjacency[0, 1] and g.adjacency[1, 2]
    sc = random_sc(5, np.random.default_rng(0))
    assert threshold_binary(sc, "absolute", 0).n_edges == 10
    with pytest.raises(ValidationError):
        threshold_binary(c, "proportional", 0)
    with pytest.raises(ValidationError):
        threshold_binary(c, "proportional", 1.5)
    assert threshold_binary(Connectome(np.zeros((4, 4)), Domain.SC), "proportional", 0.5).n_edges == 0


def test_proportional_count_at_116_nodes():
    c = random_fc(116, np.random.default_rng(2))
    g = threshold_binary(c, "proportional", 0.05)
    assert 116 * 115 // 2 == 6670
    assert g.n_edges == 333
    assert np.array_equal(g.adjacency, g.adjacency.T) and not np.diag(g.adjacency).any()
    assert len(top_edges(c, 0.05)) == 333


def test_proportional_ties_break_row_major():
    m = np.full((4, 4), 0.5)
    np.fill_diagonal(m, 1)
    g = threshold_binary(Connectome(m, Domain.FC), "proportional", 0.5)
    kept = sorted(zip(*np.nonzero(np.triu(g.adjacency, 1))))
    assert kept == [(0, 1), (0, 2), (0, 3)]


def test_top_edges_count_even_with_zero_weights():
    sc = Connectome(np.zeros((10, 10)), Domain.SC)
    assert len(top_edges(sc, 0.05)) == math.floor(0.05 * 45)


def test_vectorize_upper():
    assert np.array_equal(vectorize_upper(Connectome(np.array([[1, 0.3], [0.3, 1]]), Domain.FC)), [0.3])
    assert vectorize_upper(random_fc(116, np.random.default_rng(0))).size == 6670


def make_manifest(tmp_path, n_train, n_test, n=4):
    rng = np.random.default_rng(0)
    subjects = []
    for i in range(n_train + n_test):
        fc, sc = tmp_path / f"fc{i}.csv", tmp_path / f"sc{i}.csv"
        save_connectome(random_fc(n, rng), fc)
        save_connectome(random_sc(n, rng), sc)
        subjects.append(Subject(f"s{i}", fc, sc, i % 2, "train" if i < n_train else "test"))
    man = DatasetManifest(n=n, sc_max=100.0, subjects=subjects, path=tmp_path / "m.json")
    write_manifest(man, man.path)
    return man.path


@pytest.mark.parametrize("n_train,n_test", [(96, 24), (30, 13)])
def test_manifest_split_counts(tmp_path, n_train, n_test):
    man = load_manifest(make_manifest(tmp_path, n_train, n_test, n=3))
    assert man.split_counts == (n_train, n_test)


def test_manifest_schema_errors(tmp_path):
    path = make_manifest(tmp_path, 2, 1)
    doc = json.loads(path.read_text())
    bad = json.loads(json.dumps(doc))
    del bad["subjects"][0]["sc"]
    (tmp_path / "b1.json").write_text(json.dumps(bad))
    with pytest.raises(ValidationError, match="missing"):
        load_manifest(tmp_path / "b1.json")
    bad = json.loads(json.dumps(doc))
    bad["subjects"][0]["fc"] = "nope.csv"
    (tmp_path / "b2.json").write_text(json.dumps(bad))
    with pytest.raises(ValidationError, match="missing file"):
        load_manifest(tmp_path / "b2.json")
    bad = dict(doc, extra=1)
    (tmp_path / "b3.json").write_text(json.dumps(bad))
    with pytest.raises(ValidationError):
        load_manifest(tmp_path / "b3.json")
    bad = dict(doc, sc_max=0)
    (tmp_path / "b4.json").write_text(json.dumps(bad))
    with pytest.raises(ValidationError):
        load_manifest(tmp_path / "b4.json")
    with pytest.raises(ValidationError):
        load_manifest(tmp_path / "absent.json")


def test_manifest_load_pair(tmp_path):
    man = load_manifest(make_manifest(tmp_path, 2, 1))
    fc, sc = man.load_pair(man.subjects[0])
    assert fc.domain is Domain.FC and sc.domain is Domain.SC and fc.subject_id == "s0"
