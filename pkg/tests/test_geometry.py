import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevpmix.errors import DegenerateWeightsError, DomainError
from hevpmix.geometry import (KernelConfig, KnotSet, Site, gaussian_kernel, grid_sites, kernel_weight_array,
                              kernel_weights, median_knot_spacing)

coord = st.floats(-50, 50, allow_nan=False)
points = st.lists(st.tuples(coord, coord), min_size=1, max_size=6)


def test_kernel_at_zero_distance():
    assert gaussian_kernel(Site(0, 0), Site(0, 0), 1.0) == pytest.approx(1 / (2 * np.pi), rel=1e-14)


def test_kernel_at_one_bandwidth():
    tau = 2.5
    val = gaussian_kernel(Site(0, 0), Site(tau, 0), tau)
    assert val == pytest.approx(np.exp(-0.5) / (2 * np.pi * tau**2), rel=1e-14)


def test_kernel_three_four_five():
    val = gaussian_kernel(Site(0, 0), Site(3, 4), 5.0)
    assert val == pytest.approx(0.0038607, abs=1e-6)
    assert val == pytest.approx(np.exp(-0.5) / (50 * np.pi), rel=1e-14)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_kernel_rejects_bad_bandwidth(tau):
    with pytest.raises(DomainError):
        gaussian_kernel(Site(0, 0), Site(1, 1), tau)
    with pytest.raises(DomainError):
        KernelConfig(tau)


def test_single_knot_rows_are_one():
    wm = kernel_weights(grid_sites(3), KnotSet([(10.0, -4.0)]), 0.7)
    np.testing.assert_array_equal(wm.w, np.ones((9, 1)))


def test_equidistant_knots_split_evenly():
    wm = kernel_weights([Site(0, 0)], KnotSet([(-1, 0), (1, 0)]), 1.0)
    np.testing.assert_allclose(wm.w, [[0.5, 0.5]], rtol=0, atol=1e-15)


def test_seven_by_seven_grid_rows_sum_to_one():
    g = grid_sites(7)
    wm = kernel_weights(g, KnotSet(g), 1.0)
    assert wm.w.shape == (49, 49)
    assert np.max(np.abs(wm.w.sum(axis=1) - 1)) < 1e-12


def test_duplicate_knots_rejected():
    with pytest.raises(DomainError):
        KnotSet([(0, 0), (1, 1), (0, 0)])


def test_nonfinite_site_rejected():
    with pytest.raises(DomainError):
        Site(np.nan, 0.0)


def test_far_site_does_not_give_nan():
    # log-space normalization keeps the row well defined far from all knots
    w = kernel_weight_array([(1e4, 0.0)], [(0, 0), (1, 0)], 0.5)
    assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(w, [[0.0, 1.0]], atol=1e-300)


def test_degenerate_row_raises():
    with pytest.raises(DegenerateWeightsError):
        kernel_weight_array([(1e308, 1e308)], [(0, 0), (1, 0)], 1e-300)


def test_median_spacing():
    assert median_knot_spacing([(0.0, 0.0), (3.0, 4.0)]) == 5.0
    assert median_knot_spacing([(0.0, 0.0), (1.0, 0.0), (5.0, 0.0)]) == 4.0
    assert median_knot_spacing([(0.0, 0.0)]) == 1.0


@settings(max_examples=60, deadline=None)
@given(points, points.filter(lambda k: len(set(k)) == len(k)), st.floats(0.05, 20))
def test_rows_on_simplex(sites, knots, tau):
    w = kernel_weight_array(sites, knots, tau)
    assert np.all(w >= 0)
    assert np.max(np.abs(w.sum(axis=1) - 1)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(points, points.filter(lambda k: len(set(k)) == len(k)), st.floats(0.2, 10), st.randoms())
def test_knot_permutation_permutes_columns(sites, knots, tau, rnd):
    perm = list(range(len(knots)))
    rnd.shuffle(perm)
    w = kernel_weight_array(sites, knots, tau)
    w_perm = kernel_weight_array(sites, [knots[p] for p in perm], tau)
    np.testing.assert_allclose(w_perm, w[:, perm], rtol=1e-12, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(points, points.filter(lambda k: len(set(k)) == len(k)), st.floats(0.2, 10), coord, coord)
def test_translation_invariance(sites, knots, tau, dx, dy):
    shift = np.array([dx, dy])
    w = kernel_weight_array(sites, knots, tau)
    w2 = kernel_weight_array(np.asarray(sites) + shift, np.asarray(knots) + shift, tau)
    np.testing.assert_allclose(w2, w, rtol=1e-9, atol=1e-12)
