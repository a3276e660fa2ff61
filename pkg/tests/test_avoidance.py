import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from certs import best_certificate, feasible_certificate, random_block_and_point, random_quadrilateral
from econav.avoidance import (DualVariables, RobustConstraintBlock, box_support_multiplier,
                              certified_distance, dual_distance, occupancy_polygon,
                              robust_residuals, static_residuals, uncertainty_vertices,
                              verify_certificate)
from econav.geometry import distance_point_to_polygon, polygon_to_halfspaces

SQ_A = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
SQ_B = np.ones(4)
POINT_G = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
POINT_H = np.zeros(4)
UNIT = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)


def test_robust_residuals_hand_example():
    block = RobustConstraintBlock(SQ_A, SQ_B, POINT_G, POINT_H, d_safe=1.0)
    res = robust_residuals((3, 0), DualVariables([1, 0, 0, 0], [1, 0, 0, 0]), block)
    assert res.margin == 1.0
    assert res.cone == 0.0
    assert np.all(res.equality == 0)
    assert res.feasible()


def test_trivial_duals_are_infeasible():
    block = RobustConstraintBlock(SQ_A, SQ_B, POINT_G, POINT_H, d_safe=2.0)
    res = robust_residuals((3, 0), DualVariables(np.zeros(4), np.zeros(4)), block)
    assert res.margin == -2.0 and not res.feasible()


def test_slack_relaxes_margin():
    block = RobustConstraintBlock(SQ_A, SQ_B, POINT_G, POINT_H, d_safe=3.0, slack=0.5)
    res = robust_residuals((3, 0), DualVariables([1, 0, 0, 0], [1, 0, 0, 0]), block)
    assert res.margin == pytest.approx(2 - 3 + 0.5)


def test_dimension_mismatch_rejected():
    block = RobustConstraintBlock(SQ_A, SQ_B, POINT_G, POINT_H, d_safe=1.0)
    with pytest.raises(ValueError):
        robust_residuals((3, 0, 1), DualVariables(np.zeros(4), np.zeros(4)), block)
    with pytest.raises(ValueError):
        robust_residuals((3, 0), DualVariables(np.zeros(3), np.zeros(4)), block)
    with pytest.raises(ValueError):
        RobustConstraintBlock(SQ_A[:, :1], SQ_B, POINT_G, POINT_H, 1.0)
    with pytest.raises(ValueError):
        static_residuals((1, 1), np.zeros(2), SQ_A, SQ_B, 1.0)


def test_static_residuals_hand_example():
    A, b = polygon_to_halfspaces(UNIT)
    i = int(np.argmax(A @ [1, 0]))
    lam = np.zeros(4)
    lam[i] = 1
    res = static_residuals((2, 0.5), lam, A, b, d_safe=0.5)
    assert res.margin == pytest.approx(0.5)
    assert res.cone == pytest.approx(0.0)


def test_point_inside_has_zero_dual_value():
    A, b = polygon_to_halfspaces(UNIT)
    assert dual_distance((0.5, 0.5), A, b) == 0.0
    val, lam = dual_distance((0.5, 0.5), A, b, return_multiplier=True)
    assert np.all(lam == 0)


def test_dual_distance_examples():
    A, b = polygon_to_halfspaces(UNIT)
    assert dual_distance((2, 0.5), A, b) == pytest.approx(1.0)
    assert dual_distance((2, 2), A, b) == pytest.approx(np.sqrt(2))
    assert dual_distance((1, 0.3), A, b) == pytest.approx(0.0)
    assert distance_point_to_polygon((2, 0.5), UNIT) == 1.0
    assert distance_point_to_polygon((2, 2), UNIT) == pytest.approx(np.sqrt(2))
    assert distance_point_to_polygon((0.5, 0.5), UNIT) == 0.0


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31))
def test_dual_distance_equals_geometric_distance(seed):
    rng = np.random.default_rng(seed)
    poly = random_quadrilateral(rng)
    A, b = polygon_to_halfspaces(poly)
    p = rng.uniform(-20, 20, 2)
    val, lam = dual_distance(p, A, b, return_multiplier=True)
    assert abs(val - distance_point_to_polygon(p, poly)) < 1e-6
    assert np.all(lam >= 0) and np.linalg.norm(A.T @ lam) <= 1 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_static_form_is_robust_form_with_point_set(seed):
    rng = np.random.default_rng(seed)
    A, b = polygon_to_halfspaces(random_quadrilateral(rng))
    p = rng.uniform(-20, 20, 2)
    lam = np.abs(rng.normal(size=len(A)))
    mu = box_support_multiplier(POINT_G, POINT_H, A.T @ lam)
    rob = robust_residuals(p, DualVariables(lam, mu), RobustConstraintBlock(A, b, POINT_G, POINT_H, 2.0))
    sta = static_residuals(p, lam, A, b, 2.0)
    assert rob.margin == sta.margin and rob.cone == sta.cone
    assert np.all(rob.equality == 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_feasible_certificates_are_sound(seed):
    rng = np.random.default_rng(seed)
    block, p = random_block_and_point(rng)
    duals, cert = feasible_certificate(rng, block, p, tight=bool(rng.integers(2)))
    assert robust_residuals(p, duals, cert).feasible(1e-9)
    assert verify_certificate(p, duals, cert)
    assert certified_distance(p, cert) >= cert.d_safe - 1e-6


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_best_certificate_attains_geometric_distance(seed):
    rng = np.random.default_rng(seed)
    block, p = random_block_and_point(rng)
    margin, _ = best_certificate(block, p)
    truth = certified_distance(p, block)
    if truth > 0:
        assert abs(margin - truth) < 1e-9 * max(1.0, truth)
    else:
        assert margin <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(-100, 100), st.floats(-100, 100))
def test_residuals_translation_covariant(seed, tx, ty):
    rng = np.random.default_rng(seed)
    block, p = random_block_and_point(rng, d_safe=1.0)
    lam = np.abs(rng.normal(size=4))
    mu = np.abs(rng.normal(size=4))
    t = np.array([tx, ty])
    moved = RobustConstraintBlock(block.A, block.b + block.A @ t, block.G, block.h, 1.0)
    r0 = robust_residuals(p, DualVariables(lam, mu), block)
    r1 = robust_residuals(p + t, DualVariables(lam, mu), moved)
    assert r1.margin == pytest.approx(r0.margin, abs=1e-9 * (1 + abs(tx) + abs(ty)) * lam.sum())
    assert r1.cone == r0.cone and np.array_equal(r1.equality, r0.equality)


def test_verify_rejects_infeasible_certificate():
    block = RobustConstraintBlock(SQ_A, SQ_B, POINT_G, POINT_H, d_safe=5.0)
    with pytest.raises(ValueError):
        verify_certificate((3, 0), DualVariables([1, 0, 0, 0], [1, 0, 0, 0]), block)


def test_boundary_certificate_accepted():
    # margin exactly zero: p at distance d_safe from the swept square
    block = RobustConstraintBlock(SQ_A, SQ_B, POINT_G, np.array([0.5, 0.5, 0.0, 0.0]), d_safe=1.5)
    duals = DualVariables([1, 0, 0, 0], [1, 0, 0, 0])
    assert robust_residuals((3, 0), duals, block).margin == 0.0
    assert verify_certificate((3, 0), duals, block)


def test_point_uncertainty_reduces_to_dual_distance():
    block = RobustConstraintBlock(SQ_A, SQ_B, POINT_G, POINT_H, d_safe=1.0)
    assert certified_distance((3, 0.5), block) == pytest.approx(dual_distance((3, 0.5), SQ_A, SQ_B))


def test_occupancy_polygon_and_uncertainty_vertices():
    v = uncertainty_vertices(POINT_G, np.array([1.0, 1.0, 0.5, 0.5]))
    assert len(v) == 4
    poly = occupancy_polygon(SQ_A, SQ_B, v)
    assert np.allclose(poly.min(axis=0), [-2, -1.5]) and np.allclose(poly.max(axis=0), [2, 1.5])
    with pytest.raises(ValueError):
        box_support_multiplier(np.eye(2), np.zeros(2), np.ones(2))
