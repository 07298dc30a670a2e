import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hca.quantize import (BinEdges, Hierarchy, QuantizationWarning, build_finest_bins,
                          build_hierarchy, class_to_value, hierarchy_from_groups, max_levels,
                          transition_matrix, validate_hierarchy, value_to_class)


def test_linear_edges():
    v = np.linspace(0, 10, 101)
    np.testing.assert_allclose(build_finest_bins(v, "linear", 5).edges, [0, 2, 4, 6, 8, 10])


def test_equal_count_small_sample():
    v = [1, 1, 2, 3, 5, 8, 9, 9]
    e = build_finest_bins(v, "equal-count", 4)
    # numpy linear-interpolated quartiles of the sorted sample
    np.testing.assert_allclose(e.edges, [1, 1.75, 4, 8.25, 9])
    cls = value_to_class(np.array(v, float), e)
    groups = [sorted(np.array(v)[cls == k].tolist()) for k in range(4)]
    assert groups == [[1, 1], [2, 3], [5, 8], [9, 9]]


def test_log_boundary_at_geometric_midpoint():
    e = build_finest_bins([1.0, 5.0, 100.0], "log", 2)
    np.testing.assert_allclose(e.edges, [1, 10, 100])


def test_log_needs_positive_or_offset():
    with pytest.raises(ValueError):
        build_finest_bins([0.0, 1.0, 2.0], "log", 2)
    e = build_finest_bins([0.0, 1.0, 2.0], "log", 2, log_offset=1.0)
    assert e.edges[0] == 0.0 and e.edges[-1] == 2.0


def test_equal_count_collapse_warns():
    v = np.r_[np.zeros(50), np.ones(50), [2.0]]
    with pytest.warns(QuantizationWarning):
        e = build_finest_bins(v, "equal-count", 10)
    assert e.n_classes < 10
    assert np.all(np.diff(e.edges) > 0)


@pytest.mark.parametrize("bad", [[], [np.nan, 1.0], [3.0, 3.0]])
def test_finest_bins_errors(bad):
    with pytest.raises(ValueError):
        build_finest_bins(bad, "linear", 4)


def test_bin_edges_validation():
    with pytest.raises(ValueError):
        BinEdges([0, 1, 1])
    with pytest.raises(ValueError):
        BinEdges([0])


def test_value_to_class_intervals():
    e = BinEdges([0, 2, 4, 6, 8, 10])
    assert value_to_class(3.2, e) == 1
    assert value_to_class(0.0, e) == 0
    assert value_to_class(2.0, e) == 0  # right-closed
    assert value_to_class(10.0, e) == 4
    c, clamped = value_to_class(11.0, e, return_clamped=True)
    assert (c, clamped) == (4, True)
    c, clamped = value_to_class(-1.0, e, return_clamped=True)
    assert (c, clamped) == (0, True)
    assert value_to_class(5.0, e, return_clamped=True)[1] is False
    with pytest.raises(ValueError):
        value_to_class(np.nan, e)


def test_class_to_value_lookup_and_fallback():
    edges = np.array([0.0, 2, 4, 8, 10])
    hier = hierarchy_from_groups(edges, [[2]], train_values=np.array([1.0, 2.0, 3.0, 6.0, 7.0]))
    np.testing.assert_allclose(hier.representatives(2), [1.5, 3.0, 6.5, 9.0])
    assert class_to_value(1, hier, 2) == 3.0
    assert class_to_value(3, hier, 2) == 9.0  # empty bin -> midpoint
    with pytest.raises(IndexError):
        class_to_value(4, hier, 2)


def test_single_bin_uniform_representative():
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 2, 20000)
    hier = hierarchy_from_groups(np.array([0.0, 2.0]), [], u)
    # standard error of the mean of U[0, 2] is 1 / sqrt(3 n)
    assert abs(class_to_value(0, hier, 1) - 1.0) < 4 / np.sqrt(3 * u.size)


def test_hierarchy_uniform_four_classes():
    v = np.linspace(0, 4, 401)
    fine = build_finest_bins(v, "linear", 4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuantizationWarning)
        hier = build_hierarchy(fine, v, H=3)
    assert hier.class_counts == [2, 4]
    np.testing.assert_array_equal(hier.group_of(1), [0, 0, 1, 1])


def test_hierarchy_median_boundary():
    v = np.array([1, 1, 2, 3, 5, 8, 9, 9], float)
    fine = build_finest_bins(v, "equal-count", 4)
    hier = build_hierarchy(fine, v, H=2)
    np.testing.assert_array_equal(hier.group_of(1), [0, 0, 1, 1])
    np.testing.assert_allclose(hier.edges(1).edges, [1, 4, 9])


def test_h_reduction_rule():
    assert max_levels(100) == 7
    assert max_levels(128) == 7
    assert max_levels(4) == 2
    v = np.linspace(0, 1, 100)
    fine = build_finest_bins(v, "linear", 4)
    with pytest.warns(QuantizationWarning):
        hier = build_hierarchy(fine, v, H=7)
    assert hier.H == 2 and hier.notes


def test_h_must_be_at_least_two():
    v = np.linspace(0, 1, 10)
    with pytest.raises(ValueError):
        build_hierarchy(build_finest_bins(v, "linear", 4), v, H=1)


def test_tie_goes_to_lower_edge():
    # fine edges 0..4; the equal-length split point 2.5 sits midway between edges 2 and 3
    edges = np.array([0.0, 1, 2, 3, 5])
    fine = BinEdges(edges)
    hier = build_hierarchy(fine, np.array([0.0, 5.0]), H=2, mode="equal-length")
    np.testing.assert_allclose(hier.edges(1).edges, [0, 2, 5])


def test_merged_boundaries_recorded():
    rng = np.random.default_rng(1)
    v = rng.exponential(1.0, 1000)
    fine = build_finest_bins(v, "linear", 20)
    hier = build_hierarchy(fine, v, H=5, mode="equal-count")
    assert any("merged" in n for n in hier.notes)
    validate_hierarchy(hier)


def test_transition_examples():
    v = np.linspace(0, 4, 41)
    hier = build_hierarchy(build_finest_bins(v, "linear", 4), v, H=2)
    np.testing.assert_array_equal(transition_matrix(hier, 1), [[1, 1, 0, 0], [0, 0, 1, 1]])
    v8 = np.linspace(0, 8, 81)
    h8 = build_hierarchy(build_finest_bins(v8, "linear", 8), v8, H=3)
    T = transition_matrix(h8, 1)
    np.testing.assert_array_equal(T, np.kron(np.eye(2), np.ones(4)))
    with pytest.raises(IndexError):
        transition_matrix(h8, 3)


def test_serialization_round_trip():
    rng = np.random.default_rng(2)
    v = rng.uniform(0, 10, 500)
    hier = build_hierarchy(build_finest_bins(v, "equal-count", 16), v, H=4)
    back = Hierarchy.loads(hier.dumps())
    assert back.class_counts == hier.class_counts
    for a, b in zip(hier.levels, back.levels):
        np.testing.assert_array_equal(a.edges, b.edges)
        np.testing.assert_array_equal(a.representatives, b.representatives)
        np.testing.assert_array_equal(a.group_of, b.group_of)


@st.composite
def hierarchies(draw):
    seed = draw(st.integers(0, 10_000))
    n_fine = draw(st.integers(4, 64))
    scheme = draw(st.sampled_from(["linear", "equal-count"]))
    mode = draw(st.sampled_from(["equal-count", "equal-length"]))
    rng = np.random.default_rng(seed)
    v = rng.gamma(draw(st.floats(0.5, 5.0)), 1.0, draw(st.integers(50, 400)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuantizationWarning)
        fine = build_finest_bins(v, scheme, n_fine)
        hier = build_hierarchy(fine, v, H=draw(st.integers(2, 7)), mode=mode)
    return hier, v, rng


@settings(max_examples=60, deadline=None)
@given(hierarchies())
def test_nesting_property(case):
    hier, v, rng = case
    fine = hier.finest
    probe = rng.uniform(fine.edges[0], fine.edges[-1], 300)
    u = value_to_class(probe, fine.edges)
    for h in range(1, hier.H + 1):
        np.testing.assert_array_equal(value_to_class(probe, hier.level(h).edges), hier.group_of(h)[u])


@settings(max_examples=60, deadline=None)
@given(hierarchies())
def test_round_trip_property(case):
    hier, v, rng = case
    for h in range(1, hier.H + 1):
        e = hier.level(h).edges
        c = value_to_class(v, e)
        np.testing.assert_array_equal(value_to_class(class_to_value(c, hier, h), e), c)


@settings(max_examples=60, deadline=None)
@given(hierarchies())
def test_transition_properties(case):
    hier, _, _ = case
    n = hier.finest.n_classes
    for h, T in enumerate(hier.transitions(), start=1):
        assert set(np.unique(T)) <= {0.0, 1.0}
        np.testing.assert_array_equal(T.sum(axis=0), np.ones(n))
        for u in range(n):
            onehot = np.zeros(n)
            onehot[u] = 1
            expect = np.zeros(T.shape[0])
            expect[hier.group_of(h)[u]] = 1
            np.testing.assert_array_equal(T @ onehot, expect)
        assert hier.level(h).n_classes <= 2 ** h


def test_equal_count_matches_equal_length_on_uniform():
    rng = np.random.default_rng(3)
    v = rng.uniform(0, 1, 200_000)
    fine = build_finest_bins(v, "linear", 64)
    a = build_hierarchy(fine, v, H=6, mode="equal-count")
    b = build_hierarchy(fine, v, H=6, mode="equal-length")
    step = fine.widths().max()
    for h in range(1, a.H):
        assert np.max(np.abs(a.edges(h).edges - b.edges(h).edges)) <= step + 1e-12
