import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shiftdiag.core import (Dataset, SplitPair, ValidationError, read_csv, standardize,
                            validate)

from conftest import make_pair


def test_validate_well_formed():
    ds = validate(["a", "b"], [["1", "2"], ["3", "4"], ["5", "6.5"]])
    assert (ds.n, ds.d) == (3, 2)
    assert ds.feature_names == ("a", "b")
    assert ds.features[2, 1] == 6.5


def test_validate_nan_names_row_and_column():
    with pytest.raises(ValidationError) as exc:
        validate(["a", "b"], [["1", "2"], ["3", "nan"]])
    assert "row 1" in str(exc.value) and "'b'" in str(exc.value)


def test_validate_infinity_rejected():
    with pytest.raises(ValidationError, match="not finite"):
        validate(["a"], [["inf"]])


def test_validate_empty():
    with pytest.raises(ValidationError, match="empty dataset"):
        validate(["a", "b"], [])


def test_validate_non_numeric():
    with pytest.raises(ValidationError, match="non-numeric"):
        validate(["a"], [["x"]])


def test_validate_duplicate_names():
    with pytest.raises(ValidationError, match="duplicate"):
        validate(["a", "a"], [["1", "2"]])


def test_validate_splits_label():
    ds = validate(["a", "y", "b"], [[1, 0, 2], [3, 1, 4]], label="y")
    assert ds.feature_names == ("a", "b")
    np.testing.assert_array_equal(ds.label, [0, 1])
    assert ds.label_name == "y"


def test_validate_missing_label_column():
    with pytest.raises(ValidationError, match="label column"):
        validate(["a"], [[1]], label="y")


def test_dataset_is_immutable():
    ds = validate(["a"], [[1], [2]])
    with pytest.raises(ValueError):
        ds.features[0, 0] = 5.0


def test_pair_requires_same_columns():
    a = validate(["a", "b"], [[1, 2]])
    b = validate(["b", "a"], [[1, 2]], source_tag="current")
    with pytest.raises(ValidationError, match="differ"):
        SplitPair(a, b)


def test_pair_requires_label_in_both_or_neither():
    a = validate(["a", "y"], [[1, 2]], label="y")
    b = validate(["a"], [[1]], source_tag="current")
    with pytest.raises(ValidationError, match="label"):
        SplitPair(a, b)


def test_read_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n\n3,4\n")
    ds = read_csv(p)
    assert ds.n == 2


def test_standardize_reference_moments():
    pair = standardize(make_pair([1.0, 2.0, 3.0], [0.0, 5.0]))
    col = pair.reference.features[:, 0]
    assert col.mean() == pytest.approx(0.0, abs=1e-15)
    assert col.std(ddof=1) == pytest.approx(1.0, abs=1e-15)
    assert pair.standardized


def test_standardize_uses_reference_stats_for_current():
    # ref=[0,2]: mean 1, sample std sqrt(2)
    pair = standardize(make_pair([0.0, 2.0], [4.0]))
    assert pair.current.features[0, 0] == pytest.approx(3.0 / np.sqrt(2.0), abs=1e-15)


def test_standardize_drops_constant_feature():
    pair = standardize(make_pair(np.c_[[5.0, 5, 5], [1.0, 2, 3]],
                                 np.c_[[5.0, 6], [1.0, 1]], names=("k", "v")))
    assert pair.feature_names == ("v",)
    assert pair.dropped == ("k",)
    assert pair.current.d == 1


def test_standardize_leaves_label_alone():
    pair = standardize(make_pair([1.0, 2, 3], [4.0, 5], ref_label=[7, 8, 9], cur_label=[1, 2]))
    np.testing.assert_array_equal(pair.reference.label, [7, 8, 9])


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(3, 30), st.integers(1, 4)), elements=finite),
       arrays(float, st.tuples(st.integers(1, 30), st.just(1)), elements=finite))
def test_standardize_idempotent(ref, cur):
    cur = np.repeat(cur, ref.shape[1], axis=1)
    # keep columns with a clearly nonzero spread relative to magnitude
    spread = ref.std(axis=0, ddof=1)
    ref = ref[:, spread > 1e-3 * (1 + np.abs(ref).max(axis=0))]
    if ref.shape[1] == 0:
        return
    cur = cur[:, :ref.shape[1]]
    once = standardize(make_pair(ref, cur))
    twice = standardize(once)
    np.testing.assert_allclose(twice.reference.features, once.reference.features, atol=1e-12, rtol=0)
    np.testing.assert_allclose(twice.current.features, once.current.features,
                               atol=1e-12 * max(1.0, np.abs(once.current.features).max()), rtol=0)


@given(st.lists(st.lists(st.sampled_from(["1", "2.5", "-3", "x", "nan", "inf", " 4 "]),
                         min_size=2, max_size=2), max_size=5))
def test_validate_deterministic(rows):
    def attempt():
        try:
            return validate(["a", "b"], rows).features.tolist()
        except ValidationError as exc:
            return ("error", str(exc))
    first = attempt()
    assert attempt() == first
    if not isinstance(first, tuple):
        again = validate(["a", "b"], [[str(v) for v in r] for r in first])
        assert again.features.tolist() == first
