"""Robust collision-avoidance certificates and the geometric checks behind them.

A point ``p`` keeps distance ``d_safe`` from every translate ``O + w``,
``w`` in ``{w : G w <= h}``, of the obstacle ``O = {y : A y <= b}`` if
there exist ``lam >= 0`` and ``mu >= 0`` with

    (A p - b)' lam - h' mu >= d_safe,   ||A' lam|| <= 1,   A' lam = G' mu.

The optimisation problem carries these conditions (with a penalised
slack); the functions here evaluate them and certify them against exact
polygon geometry.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import (GeometryError, convex_hull, distance_point_to_polygon,  # noqa: F401
                       halfspaces_to_vertices, minkowski_sum_convex, normalize_rows)


@dataclass(frozen=True)
class DualVariables:
    lam: np.ndarray
    mu: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float).ravel())
        if self.mu is not None:
            object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).ravel())


@dataclass(frozen=True)
class RobustConstraintBlock:
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    d_safe: float
    slack: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        G = np.asarray(self.G, dtype=float)
        if A.ndim != 2 or G.ndim != 2 or A.shape[1] != 2 or G.shape[1] != 2:
            raise ValueError("A and G must both have two columns")
        if len(np.ravel(self.b)) != len(A) or len(np.ravel(self.h)) != len(G):
            raise ValueError("right-hand sides do not match the row counts")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).ravel())
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float).ravel())


class Residuals(NamedTuple):
    """Constraint residuals; feasible when all but ``equality`` are >= 0 and ``equality`` is 0."""

    margin: float
    cone: float
    equality: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    slack: float

    def stacked(self):
        return np.concatenate([[self.margin, self.cone], self.equality, self.lam, self.mu, [self.slack]])

    def min_violation(self):
        """Smallest residual, with the equality rows entering as ``-|r|``."""
        parts = [self.margin, self.cone, self.slack, *self.lam, *self.mu, *(-np.abs(self.equality))]
        return float(min(parts))

    def feasible(self, tol=1e-9):
        return self.min_violation() >= -tol


def robust_residuals(p, duals: DualVariables, block: RobustConstraintBlock) -> Residuals:
    p = np.asarray(p, dtype=float).ravel()
    lam, mu = duals.lam, duals.mu
    if p.shape != (2,) or lam.shape != (len(block.A),) or mu is None or mu.shape != (len(block.G),):
        raise ValueError("dimension mismatch between point, duals and constraint block")
    z = block.A.T @ lam
    margin = (block.A @ p - block.b) @ lam - mu @ block.h - block.d_safe + block.slack
    return Residuals(float(margin), float(1.0 - z @ z), z - block.G.T @ mu, lam, mu,
                     float(block.slack))


def static_residuals(p, lam, A, b, d_safe) -> Residuals:
    """Residuals for an obstacle that does not move (no uncertainty terms)."""
    p = np.asarray(p, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if p.shape != (2,) or lam.shape != (len(A),) or b.shape != (len(A),):
        raise ValueError("dimension mismatch between point, duals and obstacle")
    z = A.T @ lam
    margin = (A @ p - b) @ lam - d_safe
    return Residuals(float(margin), float(1.0 - z @ z), np.zeros(0), lam, np.zeros(0), 0.0)


def dual_distance(p, A, b, return_multiplier=False):
    """Distance from ``p`` to ``{y : A y <= b}`` as the value of its conic dual

        max (A p - b)' lam   s.t.  lam >= 0, ||A' lam|| <= 1,

    solved exactly by enumerating active sets of one or two rows.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    c = A @ np.asarray(p, dtype=float) - b
    best, best_lam = 0.0, np.zeros(len(A))
    norms = np.linalg.norm(A, axis=1)
    for i in range(len(A)):
        if c[i] > 0 and norms[i] > 0:
            val = c[i] / norms[i]
            if val > best:
                best, best_lam = val, _unit(len(A), {i: 1.0 / norms[i]})
    for i, j in itertools.combinations(range(len(A)), 2):
        M = A[[i, j]] @ A[[i, j]].T
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        if det <= 1e-12 * M[0, 0] * M[1, 1]:
            continue
        cs = c[[i, j]]
        w = np.linalg.solve(M, cs)
        q = float(cs @ w)
        if q <= 0:
            continue
        lam_s = w / np.sqrt(q)
        if np.all(lam_s >= 0):
            val = np.sqrt(q)
            if val > best:
                best, best_lam = val, _unit(len(A), {i: lam_s[0], j: lam_s[1]})
    if not np.isfinite(best):
        raise ArithmeticError("dual distance evaluation failed")
    return (float(best), best_lam) if return_multiplier else float(best)


def _unit(n, entries):
    v = np.zeros(n)
    for k, val in entries.items():
        v[k] = val
    return v


def box_support_multiplier(G, h, z):
    """Cheapest ``mu >= 0`` with ``G' mu = z`` for a set whose rows come in
    opposite pairs ``(g, -g)`` (boxes): the LP has a closed-form solution."""
    G = np.asarray(G, dtype=float)
    mu = np.zeros(len(G))
    for i in range(0, len(G), 2):
        g = G[i]
        if not np.allclose(G[i + 1], -g):
            raise ValueError("rows are not paired")
    # rows of a PCA box are orthonormal pairs, so projections give the coefficients
    D = G[0::2]
    coef = np.linalg.solve(D @ D.T, D @ z)
    mu[0::2] = np.maximum(coef, 0.0)
    mu[1::2] = np.maximum(-coef, 0.0)
    return mu


def occupancy_polygon(A, b, uncertainty_vertices):
    """Vertices of ``{y : A y <= b}`` swept by the convex hull of the given translations."""
    base = halfspaces_to_vertices(A, b)
    return minkowski_sum_convex(base, convex_hull(uncertainty_vertices))


def uncertainty_vertices(G, h):
    """Vertices of a bounded (possibly degenerate) ``{w : G w <= h}``."""
    G, h = normalize_rows(G, h)
    pts = []
    for i, j in itertools.combinations(range(len(G)), 2):
        M = G[[i, j]]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        y = np.linalg.solve(M, h[[i, j]])
        if np.all(G @ y <= h + 1e-9 * (1 + np.abs(h))):
            pts.append(y)
    if not pts:
        raise GeometryError("uncertainty set is empty or unbounded")
    return convex_hull(np.array(pts))


def certified_distance(p, block: RobustConstraintBlock):
    """Exact distance from ``p`` to the swept occupancy ``O + W``."""
    poly = occupancy_polygon(block.A, block.b, uncertainty_vertices(block.G, block.h))
    return distance_point_to_polygon(p, poly)


def verify_certificate(p, duals: DualVariables, block: RobustConstraintBlock, forecast_box=None,
                       tol=1e-6, pre_tol=1e-9):
    """Check the geometric fact a feasible certificate asserts.

    ``forecast_box`` optionally supplies the uncertainty set's vertices
    directly; otherwise they are enumerated from ``(G, h)``.  Raises
    ``ValueError`` if the certificate itself is infeasible beyond ``pre_tol``.
    """
    res = robust_residuals(p, duals, block)
    if not res.feasible(pre_tol):
        raise ValueError(f"certificate is infeasible (worst residual {res.min_violation():.3g})")
    verts = uncertainty_vertices(block.G, block.h) if forecast_box is None else forecast_box
    poly = occupancy_polygon(block.A, block.b, verts)
    return distance_point_to_polygon(p, poly) >= block.d_safe - tol
