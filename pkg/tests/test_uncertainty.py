import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from econav.uncertainty import (InsufficientData, PolyhedralSet, SampleSet, box_vertices,
                                contains, contains_many, coverage_threshold, max_excess,
                                parametric_point, pca_box, principal_directions,
                                required_sample_count, singleton, to_halfspaces, validate_coverage)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
sample_arrays = st.integers(2, 40).flatmap(lambda n: arrays(float, (n, 2), elements=finite))


def test_required_sample_count_examples():
    assert required_sample_count(0.1, 0.1, 2) == 84
    assert required_sample_count(0.5, 0.5, 2) == 12
    # independent evaluation of the bound
    e = math.e
    assert required_sample_count(0.05, 0.01, 2) == math.ceil(20 * e / (e - 1) * (3 + math.log(100)))


@pytest.mark.parametrize("eps,beta,dim", [(1.0, 0.1, 2), (0.0, 0.1, 2), (0.1, 1.0, 2),
                                          (0.1, 0.0, 2), (0.1, 0.1, 0), (0.1, 0.1, 1.5)])
def test_required_sample_count_rejects_out_of_range(eps, beta, dim):
    with pytest.raises(ValueError):
        required_sample_count(eps, beta, dim)


def test_pca_identical_samples_give_singleton():
    box = pca_box(np.tile([1.0, 2.0], (5, 1)))
    assert np.array_equal(box.mean, [1.0, 2.0])
    assert np.all(box.lower == 0) and np.all(box.upper == 0)
    pset = to_halfspaces(box)
    assert contains(pset, [1.0, 2.0], tol=0)
    assert not contains(pset, [1.0 + 1e-6, 2.0], tol=1e-9)


def test_pca_cross_samples_tie_breaks_to_axes():
    box = pca_box([(1, 0), (-1, 0), (0, 1), (0, -1)])
    assert np.array_equal(box.mean, [0, 0])
    assert np.array_equal(box.directions, np.eye(2))
    assert np.allclose(box.lower, [-1, -1]) and np.allclose(box.upper, [1, 1])
    pset = to_halfspaces(box)
    assert np.allclose(pset.G, [[1, 0], [-1, 0], [0, 1], [0, -1]])
    assert np.allclose(pset.h, [1, 1, 1, 1])
    assert np.allclose(box_vertices(box), [(-1, -1), (1, -1), (1, 1), (-1, 1)])


def test_pca_diagonal_line():
    box = pca_box([(-1, -1), (0, 0), (1, 1)])
    assert np.allclose(box.directions[0], np.array([1, 1]) / np.sqrt(2))
    assert box.lower[0] == pytest.approx(-np.sqrt(2)) and box.upper[0] == pytest.approx(np.sqrt(2))
    assert box.lower[1] == pytest.approx(0, abs=1e-15) and box.upper[1] == pytest.approx(0, abs=1e-15)


def test_pca_needs_two_samples():
    with pytest.raises(InsufficientData):
        pca_box([(1.0, 1.0)])
    with pytest.raises(ValueError):
        SampleSet([(np.nan, 0.0)])


def test_contains_unit_box():
    pset = PolyhedralSet(np.array([[1, 0], [-1, 0], [0, 1], [0, -1]]), np.ones(4))
    assert contains(pset, (0, 0))
    assert not contains(pset, (2, 0))
    with pytest.raises(ValueError):
        PolyhedralSet(np.zeros((1, 2)), np.ones(1))
    with pytest.raises(ValueError):
        PolyhedralSet(np.eye(2), np.zeros(2), witness=(1.0, 0.0))


@settings(max_examples=150, deadline=None)
@given(sample_arrays)
def test_closed_form_eigenvectors_match_eigh(w):
    z = w - w.mean(axis=0)
    cov = z.T @ z / (len(w) - 1)
    dirs, lam = principal_directions(cov)
    assert np.allclose(dirs @ dirs.T, np.eye(2), atol=1e-12)
    ref_val, ref_vec = np.linalg.eigh(cov)
    assert np.allclose(lam, ref_val[::-1], atol=1e-9 * (1 + np.abs(ref_val).max()))
    if ref_val[1] - ref_val[0] > 1e-6 * (1 + abs(ref_val[1])):
        # the leading direction agrees up to sign
        assert abs(abs(dirs[0] @ ref_vec[:, 1]) - 1) < 1e-8
    for d in dirs:
        first = d[np.flatnonzero(d)[0]]
        assert first > 0


@settings(max_examples=150, deadline=None)
@given(sample_arrays)
def test_training_samples_are_covered(w):
    pset = to_halfspaces(pca_box(w))
    assert np.all(contains_many(pset, w, tol=1e-12 * (1 + np.abs(w).max())))
    assert max_excess(pset, w) <= 1e-12 * (1 + np.abs(w).max())


@settings(max_examples=80, deadline=None)
@given(sample_arrays)
def test_vertices_lie_on_two_rows(w):
    box = pca_box(w)
    pset = to_halfspaces(box)
    tol = 1e-9 * (1 + np.abs(w).max())
    for v in box_vertices(box):
        r = pset.G @ v - pset.h
        assert np.all(r <= tol)
        assert np.sum(np.abs(r) <= tol) >= 2


@settings(max_examples=60, deadline=None)
@given(sample_arrays, st.integers(0, 2**31))
def test_parametric_and_halfspace_forms_agree(w, seed):
    rng = np.random.default_rng(seed)
    box = pca_box(w)
    pset = to_halfspaces(box)
    scale = 1 + np.abs(w).max()
    pts = np.array([parametric_point(box, a) for a in rng.uniform(0, 1, (50, 2))])
    assert np.all(contains_many(pset, pts, tol=1e-9 * scale))
    # rejection-sample the bounding square and map accepted points back to weights
    lo, hi = w.min(axis=0) - 1, w.max(axis=0) + 1
    cand = rng.uniform(lo, hi, (400, 2))
    inside = cand[contains_many(pset, cand, tol=0.0)]
    width = box.upper - box.lower
    for p in inside:
        coord = box.directions @ (p - box.mean)
        alpha = np.divide(coord - box.lower, width, out=np.zeros(2), where=width > 0)
        assert np.all(alpha >= -1e-9) and np.all(alpha <= 1 + 1e-9)


def test_singleton_box_and_vertices():
    box = singleton((3.0, -1.0))
    v = box_vertices(box)
    assert np.allclose(v, [(3.0, -1.0)] * 4)
    assert contains(to_halfspaces(box), (3.0, -1.0), tol=0)


def test_monte_carlo_coverage_small():
    fr = validate_coverage(0.1, 0.1, trials=20, seed=5, draws=2000)
    assert fr.shape == (20,)
    assert np.sum(fr >= 0.9) >= coverage_threshold(20, 0.1)
    with pytest.raises(ValueError):
        validate_coverage(0.1, 0.1, trials=0)


def test_coverage_threshold_binomial_quantile():
    from scipy.stats import binom
    t = coverage_threshold(200, 0.1)
    assert binom.cdf(t - 1, 200, 0.9) <= 0.01 < binom.cdf(t, 200, 0.9)
    assert t <= 170
