import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from excite_lens.excitation import ExcitationMaps
from excite_lens.metrics import THRESHOLD_MODE, extent, map_statistics, strength, unit_max_scores

M = np.array([[[0.1, 0], [0, 0]], [[0.2, 0.1], [0, 0]]], np.float64)


def test_strength_example():
    assert strength(M) == pytest.approx(0.3)
    assert strength(np.full((3, 5), 0.25)) == 0.25
    assert strength(np.zeros((2, 4, 4))) == 0


def test_extent_example():
    e, t = extent(np.array([[0.3, 0.1], [0, 0]]))
    assert t == pytest.approx(0.1)
    assert e == 0.25


def test_extent_constant_is_zero():
    assert extent(np.full((4, 4), 0.7))[0] == 0
    assert extent(np.zeros((3, 2, 2)))[0] == 0


def test_extent_one_hot():
    m = np.zeros((4, 4))
    m[2, 1] = 1.0
    assert extent(m) == (0.0625, 0.0625)


def test_unit_max_example():
    np.testing.assert_allclose(unit_max_scores(M), [0.1, 0.2])
    assert unit_max_scores(np.zeros((2, 3, 3))).tolist() == [0, 0]


def test_threshold_mode_recorded():
    assert THRESHOLD_MODE == "mean_over_locations"


maps_st = arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6)),
                 elements=st.floats(0, 1, width=32))


@settings(max_examples=100)
@given(maps_st)
def test_against_scan_oracle(m):
    agg = m.astype(np.float64).sum(axis=0)
    vals = [float(v) for v in agg.ravel()]
    assert strength(m) == max(vals)
    mean = sum(vals) / len(vals)
    e, t = extent(m)
    assert 0 <= e < 1
    if max(vals) != min(vals):
        assert t == pytest.approx(mean, rel=1e-12)
        assert e == sum(v > t for v in vals) / len(vals)
        assert 0 < e < 1
    assert strength(m) >= t
    k = m.shape[0]
    assert unit_max_scores(m).tolist() == [max(float(v) for v in m[i].ravel()) for i in range(k)]


@settings(max_examples=50)
@given(maps_st, st.randoms(use_true_random=False))
def test_permutation_invariance(m, r):
    h, w = m.shape[1:]
    perm = list(range(h * w))
    r.shuffle(perm)
    p = m.reshape(m.shape[0], -1)[:, perm].reshape(m.shape)
    assert strength(p) == strength(m)
    assert extent(p)[0] == extent(m)[0]


@settings(max_examples=50)
@given(maps_st, st.integers(-6, 6))
def test_power_of_two_scaling(m, e):
    c = 2.0 ** e  # exact in binary floating point
    s = m.astype(np.float64) * c
    assert strength(s) == strength(m) * c
    assert extent(s)[0] == extent(m)[0]
    assert extent(s)[1] == pytest.approx(extent(m)[1] * c, rel=1e-12)


@settings(max_examples=50)
@given(maps_st, st.floats(0.1, 10))
def test_general_scaling(m, c):
    s = m.astype(np.float64) * c
    assert strength(s) == pytest.approx(strength(m) * c, rel=1e-12)
    assert extent(s)[1] == pytest.approx(extent(m)[1] * c, rel=1e-9, abs=1e-300)


def test_map_statistics_row():
    em = ExcitationMaps(M.astype(np.float32), 0.6, "t", 1, "img")
    s = map_statistics(em, brand_predicted="b")
    assert (s.image_id, s.brand_predicted, s.discarded_mass) == ("img", "b", 0.6)
    assert s.strength == pytest.approx(0.3) and s.extent == 0.25
    assert s.threshold == pytest.approx(0.1)
