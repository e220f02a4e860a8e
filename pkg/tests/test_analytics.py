import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from maxvqa.analytics import (AnnotationTable, amr, arr, correlation_map, cross_dimension_matrix, mos,
                              mos_matrix, opinion_summary, plcc, srcc, tendency)
from maxvqa.dimensions import AXIS_CODES
from maxvqa.errors import DataError, DegenerateInputError


def table_from(opinions, axis="T-1"):
    """opinions: list (per video) of lists (per subject)."""
    rows = [(f"v{i}", axis, f"s{k}", o) for i, ops in enumerate(opinions) for k, o in enumerate(ops)]
    return AnnotationTable(rows)


@pytest.mark.parametrize("ops,expected", [((-1, 0, 1, 1), 0.25), ((1, 1, 1), 1.0), ((-1, 1), 0.0)])
def test_mos(ops, expected):
    assert mos(table_from([list(ops)]), "v0", "T-1") == expected


def test_mos_requires_opinions():
    with pytest.raises(DataError):
        mos(table_from([[1]]), "v9", "T-1")


def test_accepted_subjects_filter():
    rows = [("v", "O", "good", 1), ("v", "O", "bad", -1)]
    assert mos(AnnotationTable(rows, accepted_subjects={"good"}), "v", "O") == 1.0


def test_rejects_non_ternary():
    with pytest.raises(DataError):
        AnnotationTable([("v", "O", "s", 2)])


def test_amr_examples():
    # MOS {0.5, -0.5}
    assert amr(table_from([[1, 0], [-1, 0]]), "T-1") == 0.5
    assert amr(table_from([[0, 0], [1, -1]]), "T-1") == 0.0
    assert amr(table_from([[1], [-1], [0], [0]]), "T-1") == 0.5


def test_arr_examples():
    assert arr(table_from([[0, 0, 1, -1]]), "T-1") == 0.5
    assert arr(table_from([[0, 0], [0, 0]]), "T-1") == 0.0


def test_tendency_examples():
    t = tendency(table_from([[1, 1, -1, 0]]), "T-1")
    assert t.ratio == 2.0 and (t.positives, t.negatives) == (2, 1)
    assert tendency(table_from([[1, -1, 1, -1]]), "T-1").ratio == 1.0
    inf = tendency(table_from([[1, 0]]), "T-1")
    assert inf.unbounded and math.isinf(inf.ratio)
    with pytest.raises(DataError):
        tendency(table_from([[0, 0]]), "T-1")


def test_empty_axis_errors():
    t = table_from([[1]])
    for fn in (amr, arr):
        with pytest.raises(DataError):
            fn(t, "O")


def check_table(opinions, axes):
    """opinions[v][a][k]; compare every statistic with the direct oracle."""
    rows = [(f"v{v}", axes[a], f"s{k}", o)
            for v, per_axis in enumerate(opinions) for a, ops in enumerate(per_axis) for k, o in enumerate(ops)]
    table = AnnotationTable(rows)
    for a, axis in enumerate(axes):
        per_video = [opinions[v][a] for v in range(len(opinions))]
        for v, ops in enumerate(per_video):
            assert mos(table, f"v{v}", axis) == float(oracles.mos(ops))
        assert amr(table, axis) == float(oracles.amr(per_video))
        assert arr(table, axis) == float(oracles.arr(per_video))
        assert amr(table, axis) <= arr(table, axis)
        ratio, pos, neg = oracles.tendency(per_video)
        if pos + neg:
            t = tendency(table, axis)
            assert (t.positives, t.negatives) == (pos, neg)
            assert t.ratio == (ratio if math.isinf(ratio) else float(ratio))
    _, _, mat = mos_matrix(table, axes=axes)
    if len(opinions) >= 2 and all(np.ptp(mat[:, j]) > 0 for j in range(len(axes))):
        got = correlation_map(mat)
        for i in range(len(axes)):
            for j in range(len(axes)):
                expected = 1.0 if i == j else oracles.pearson(list(mat[:, i]), list(mat[:, j]))
                assert got[i, j] == pytest.approx(expected, abs=1e-12)
    return table


def test_exhaustive_small_tables():
    # every opinion assignment for 2 videos x 2 subjects x 1 axis, and 1 video x 4 subjects x 1 axis
    for flat in itertools.product((-1, 0, 1), repeat=4):
        check_table([[list(flat[:2])], [list(flat[2:])]], ["T-1"])
        check_table([[list(flat)]], ["O"])


def test_random_tables_match_oracle():
    rng = np.random.default_rng(7)
    axes = ["T-1", "A-2", "O"]
    for _ in range(300):
        n_videos, n_subjects = rng.integers(1, 6), rng.integers(1, 5)
        opinions = rng.integers(-1, 2, size=(n_videos, 3, n_subjects)).tolist()
        check_table(opinions, axes)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(-1, 1), min_size=3, max_size=3), min_size=1, max_size=6))
def test_amr_not_above_arr(opinions):
    t = table_from(opinions)
    assert 0 <= amr(t, "T-1") <= arr(t, "T-1") <= 1


def test_mos_of_concatenated_multisets():
    a, b = [1, 0, -1, 1], [1, 1, 0]
    whole = mos(table_from([a + b]), "v0", "T-1")
    parts = (len(a) * mos(table_from([a]), "v0", "T-1") + len(b) * mos(table_from([b]), "v0", "T-1")) / 7
    assert whole == pytest.approx(parts, abs=1e-15)


def test_correlation_examples():
    assert plcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert srcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert srcc([1, 2, 3], [10, 20, 15]) == pytest.approx(0.5, abs=1e-12)
    x = np.array([0.3, -1.0, 2.5, 0.7])
    assert plcc(x, -x) == pytest.approx(-1.0) and srcc(x, -x) == pytest.approx(-1.0)


def test_correlation_errors():
    with pytest.raises(DegenerateInputError):
        plcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateInputError):
        srcc([1], [2])
    with pytest.raises(DataError):
        plcc([1, 2], [1, 2, 3])


def test_srcc_ties_match_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = rng.integers(3, 12)
        x = rng.integers(0, 4, n).astype(float)
        y = rng.integers(0, 4, n).astype(float)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        assert srcc(x, y) == pytest.approx(oracles.spearman(list(x), list(y)), abs=1e-12)


def test_correlation_map_properties():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(50, 5))
    m[:, 3] = m[:, 1]
    c = correlation_map(m)
    assert c[1, 3] == pytest.approx(1.0)
    assert np.abs(c - c.T).max() <= 1e-12
    assert np.all(np.diag(c) == 1.0)


def test_correlation_map_independent_columns():
    m = np.random.default_rng(1).normal(size=(10_000, 16))
    c = correlation_map(m)
    off = c[~np.eye(16, dtype=bool)]
    assert np.abs(off).max() < 0.05


def test_correlation_map_constant_column():
    m = np.random.default_rng(0).normal(size=(10, 16))
    m[:, 15] = 0.3
    with pytest.raises(DegenerateInputError, match="O"):
        correlation_map(m)


def _per_video(mat, ids):
    return {v: dict(zip(AXIS_CODES, row)) for v, row in zip(ids, mat)}


def test_cross_dimension_self():
    rng = np.random.default_rng(2)
    mat = rng.normal(size=(40, 16))
    ids = [f"v{i}" for i in range(40)]
    res = cross_dimension_matrix(_per_video(mat, ids), _per_video(mat, ids))
    assert np.allclose(np.diag(res.matrix), 1.0)
    assert all(res.diagonal_dominant)
    assert res.row_argmax == list(AXIS_CODES)


def test_cross_dimension_shuffled_is_null():
    rng = np.random.default_rng(4)
    mat = rng.normal(size=(4000, 16))
    ids = [f"v{i}" for i in range(4000)]
    shuffled = mat[rng.permutation(4000)]
    res = cross_dimension_matrix(_per_video(shuffled, ids), _per_video(mat, ids))
    assert np.abs(res.matrix).max() < 0.08


def test_cross_dimension_alignment_error():
    row = {a: 0.0 for a in AXIS_CODES}
    with pytest.raises(DataError):
        cross_dimension_matrix({"a": row, "b": row}, {"a": row, "c": row})


def test_file_roundtrip_and_summary(tmp_path):
    rows = [("v1", "T-1", "s1", 1), ("v1", "T-1", "s2", 0), ("v2", "T-1", "s1", -1), ("v2", "T-1", "s2", -1),
            ("v1", "O", "s1", 1), ("v2", "O", "s1", 0)]
    path = tmp_path / "ann.tsv"
    AnnotationTable(rows).to_file(path)
    table = AnnotationTable.from_file(path)
    summary = {r["axis_code"]: r for r in opinion_summary(table)}
    assert summary["T-1"]["amr"] == 0.75 and summary["T-1"]["arr"] == 0.75
    assert summary["T-1"]["tendency"] == 0.5
    assert summary["O"]["tendency"] == math.inf


def test_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("video,axis\nv,O\n")
    with pytest.raises(DataError, match="missing columns"):
        AnnotationTable.from_file(path)
