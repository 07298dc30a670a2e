import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hca.labels import default_sigma, gaussian_kernel, lds_weights, level_targets, one_hot, sord_soft
from hca.quantize import build_finest_bins, build_hierarchy, hierarchy_from_groups


def reps_hierarchy(reps):
    """Hierarchy whose finest representatives are exactly ``reps``."""
    reps = np.asarray(reps, float)
    mids = 0.5 * (reps[:-1] + reps[1:])
    edges = np.r_[reps[0] - 1.0, mids, reps[-1] + 1.0]
    # one training value per bin, sitting on the representative
    return hierarchy_from_groups(edges, [], train_values=reps)


@pytest.fixture
def four_bins():
    return hierarchy_from_groups(np.array([0.0, 1, 2, 3, 4]), [[2]])


def test_one_hot(four_bins):
    np.testing.assert_array_equal(one_hot(2.5, four_bins, 2), [0, 0, 1, 0])
    np.testing.assert_array_equal(one_hot(0.0, four_bins, 2), [1, 0, 0, 0])
    np.testing.assert_array_equal(one_hot(9.0, four_bins, 2), [0, 0, 0, 1])
    np.testing.assert_array_equal(one_hot(3.0, four_bins, 1), [0, 1])
    with pytest.raises(ValueError):
        one_hot(np.nan, four_bins, 2)


def test_sord_symmetric():
    hier = reps_hierarchy([0.0, 1.0])
    for sigma in (0.1, 1.0, 7.0):
        np.testing.assert_allclose(sord_soft(0.5, hier, 1, sigma), [0.5, 0.5])


def test_sord_three_classes():
    hier = reps_hierarchy([0.0, 1.0, 2.0])
    oracle = np.exp([0.0, -0.5, -2.0])
    oracle /= oracle.sum()
    # frozen from the direct evaluation above
    np.testing.assert_allclose(oracle, [0.574097, 0.348207, 0.077696], atol=5e-7)
    np.testing.assert_allclose(sord_soft(0.0, hier, 1, 1.0), oracle, rtol=1e-12)


def test_sord_sigma_limit(four_bins):
    np.testing.assert_allclose(sord_soft(2.3, four_bins, 2, 1e-3), one_hot(2.3, four_bins, 2), atol=1e-12)


def test_sord_rejects_bad_sigma(four_bins):
    for s in (0.0, -1.0):
        with pytest.raises(ValueError):
            sord_soft(1.0, four_bins, 2, s)


def test_default_sigma(four_bins):
    assert default_sigma(four_bins) == 0.5


def test_lds_uniform_counts(four_bins):
    v = np.repeat([0.5, 1.5, 2.5, 3.5], 10)
    np.testing.assert_allclose(lds_weights(v, four_bins, 0), 1.0)


def test_lds_two_classes_no_smoothing():
    hier = hierarchy_from_groups(np.array([0.0, 1.0, 2.0]), [])
    v = np.r_[np.full(9, 0.5), [1.5]]
    w = lds_weights(v, hier, kernel_half_width=0)
    # inverse frequency 1/9 and 1, scaled so the mean over the 10 samples is 1
    np.testing.assert_allclose(w[:9], 5 / 9)
    np.testing.assert_allclose(w[9], 5.0)
    assert np.mean(w) == pytest.approx(1.0)


def test_lds_wide_kernel_flattens():
    rng = np.random.default_rng(0)
    hier = hierarchy_from_groups(np.linspace(0, 50, 51), [])
    v = rng.uniform(0, 50, 5000)
    w = lds_weights(v, hier, kernel_half_width=20, sigma=50.0)
    inner = w[(v > 20) & (v < 30)]
    # zero padding lifts weights at the range ends; inside, the kernel sees flat counts
    assert inner.max() / inner.min() < 1.05
    raw = lds_weights(v, hier, kernel_half_width=0)
    assert np.std(w[(v > 20) & (v < 30)]) < np.std(raw[(v > 20) & (v < 30)])


def test_gaussian_kernel():
    k = gaussian_kernel(2, 1.0)
    assert k.size == 5 and k.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, k[::-1])


def test_level_targets_modes():
    rng = np.random.default_rng(1)
    v = rng.uniform(0, 10, 200)
    hier = build_hierarchy(build_finest_bins(v, "linear", 16), v, H=4)
    hard = level_targets(v, hier, "hard")
    soft = level_targets(v, hier, "soft")
    assert [t.shape[1] for t in hard] == hier.class_counts
    for t in hard + soft:
        np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        level_targets(v, hier, "fuzzy")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12, unique=True),
       st.floats(-60, 60), st.floats(0.01, 30))
def test_sord_properties(reps, v, sigma):
    reps = np.sort(reps)
    if np.min(np.diff(reps)) < 1e-3:
        return
    hier = reps_hierarchy(reps)
    p = sord_soft(v, hier, 1, sigma)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-9
    # at a representative the label peaks at its own class
    j = len(reps) // 2
    q = sord_soft(reps[j], hier, 1, sigma)
    assert q.argmax() == np.argmax(one_hot(reps[j], hier, 1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=3, max_size=20), st.integers(0, 3))
def test_lds_weight_order_reverses_density(counts, hw):
    n = len(counts)
    hier = hierarchy_from_groups(np.arange(n + 1, dtype=float), [])
    v = np.repeat(np.arange(n) + 0.5, counts)
    w = lds_weights(v, hier, hw, 1.0)
    assert np.all(np.isfinite(w)) and np.all(w > 0)
    assert np.mean(w) == pytest.approx(1.0)
    counts_f = np.asarray(counts, float)
    smooth = np.convolve(counts_f, gaussian_kernel(hw, 1.0), "same") if hw else counts_f
    per = smooth[np.repeat(np.arange(n), counts)]
    order = np.argsort(per, kind="stable")
    assert np.all(np.diff(w[order]) <= 1e-12)
