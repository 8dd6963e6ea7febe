import csv

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from shiftdiag.projections import ecdf, pca_project, write_ecdf_csv, write_pca_csv
from shiftdiag.stattests import ecdf_values

from conftest import make_pair


def test_rank_one_line():
    x = np.linspace(-1, 1, 21)
    pts = np.c_[x, 2 * x]
    res = pca_project(make_pair(pts[:10], pts[10:]), c=2)
    np.testing.assert_allclose(res.components[0], np.array([1, 2]) / np.sqrt(5), atol=1e-12)
    assert res.explained_variance[1] == pytest.approx(0, abs=1e-12)


def test_full_rank_preserves_distances(rng):
    ref, cur = rng.standard_normal((30, 4)), rng.standard_normal((25, 4)) + 1
    res = pca_project(make_pair(ref, cur), c=4)
    np.testing.assert_allclose(pdist(res.coordinates), pdist(np.vstack([ref, cur])), atol=1e-8)


def test_components_orthonormal_and_variance(rng):
    ref, cur = rng.standard_normal((40, 5)), rng.standard_normal((40, 5)) * 2
    res = pca_project(make_pair(ref, cur), c=3)
    np.testing.assert_allclose(res.components @ res.components.T, np.eye(3), atol=1e-10)
    assert np.all(np.diff(res.explained_variance) <= 1e-12)
    full = pca_project(make_pair(ref, cur), c=5)
    assert full.explained_variance.sum() == pytest.approx(full.total_variance, rel=1e-10)


def test_sign_convention_and_determinism(rng):
    pair = make_pair(rng.standard_normal((30, 3)), rng.standard_normal((30, 3)))
    a, b = pca_project(pair, 2), pca_project(pair, 2)
    np.testing.assert_array_equal(a.coordinates, b.coordinates)
    for row in a.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_too_many_components(rng):
    with pytest.raises(ValueError):
        pca_project(make_pair(rng.standard_normal((5, 2)), rng.standard_normal((5, 2))), 3)


def test_ecdf_examples():
    assert ecdf([3, 1, 2, 2]) == [(1.0, 0.25), (2.0, 0.75), (3.0, 1.0)]
    assert ecdf([5]) == [(5.0, 1.0)]
    with pytest.raises(ValueError):
        ecdf([])


def test_ecdf_agrees_with_ks_ecdf(rng):
    x = rng.integers(0, 10, 50).astype(float)
    pts = ecdf(x)
    t = np.array([p[0] for p in pts])
    np.testing.assert_allclose([p[1] for p in pts], ecdf_values(x, t))


def test_csv_writers(tmp_path, rng):
    pair = make_pair(rng.standard_normal((6, 2)), rng.standard_normal((4, 2)), names=["u", "v"])
    write_pca_csv(pca_project(pair, 2), tmp_path / "pca.csv")
    write_ecdf_csv(pair, tmp_path / "ecdf.csv")
    rows = list(csv.reader(open(tmp_path / "pca.csv")))
    assert rows[0] == ["component_1", "component_2", "source"] and len(rows) == 11
    rows = list(csv.reader(open(tmp_path / "ecdf.csv")))
    assert rows[0] == ["t", "F", "source", "feature"]
    assert {r[3] for r in rows[1:]} == {"u", "v"}
