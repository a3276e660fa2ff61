"""PCA-aligned polyhedral uncertainty sets built from displacement samples."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-9


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray  # (count, 2)
    k: int = 0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", arr)

    @property
    def count(self):
        return len(self.samples)


@dataclass(frozen=True)
class PcaBox:
    mean: np.ndarray
    directions: np.ndarray  # rows d_1, d_2
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class PolyhedralSet:
    """The set ``{w : G w <= h}`` with a stored interior-or-boundary witness."""

    G: np.ndarray
    h: np.ndarray
    witness: np.ndarray = field(default=None)

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float).reshape(-1, 2)
        h = np.asarray(self.h, dtype=float).ravel()
        if len(G) != len(h):
            raise ValueError("G and h have inconsistent row counts")
        if np.any(np.linalg.norm(G, axis=1) == 0):
            raise ValueError("halfspace rows must be nonzero")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        if self.witness is not None:
            w = np.asarray(self.witness, dtype=float).ravel()
            if np.any(G @ w > h + 1e-9 * (1 + np.abs(h))):
                raise ValueError("witness point is outside the set")
            object.__setattr__(self, "witness", w)


def required_sample_count(epsilon, beta, dim=2):
    """Smallest sample count for which the PCA box covers a fresh draw with
    probability at least ``1 - epsilon`` at confidence ``1 - beta``."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim}")
    e = math.e
    return math.ceil((1.0 / epsilon) * (e / (e - 1.0)) * (2 * dim - 1 + math.log(1.0 / beta)))


def _canonical(v):
    """Flip sign so the first nonzero component is positive."""
    for c in v:
        if c > 0:
            return v
        if c < 0:
            return -v
    return v


def principal_directions(cov):
    """Orthonormal eigenvectors of a symmetric 2x2 matrix, by descending eigenvalue.

    Closed form from trace and determinant.  Equal eigenvalues give the
    coordinate axes.
    """
    a, b, c = float(cov[0, 0]), float(cov[0, 1]), float(cov[1, 1])
    scale = abs(a) + abs(c) + abs(b)
    if scale == 0.0:
        return np.eye(2), np.array([a, c])
    # eigenvectors are scale invariant; normalising avoids under/overflow
    a, b, c = a / scale, b / scale, c / scale
    half_gap = math.hypot((a - c) / 2.0, b)
    if half_gap <= 1e-14:
        return np.eye(2), scale * np.array([a, c])
    mid = (a + c) / 2.0
    lam1, lam2 = mid + half_gap, mid - half_gap
    # two algebraically equivalent eigenvector forms; take the better conditioned one
    v1 = np.array([b, lam1 - a])
    v2 = np.array([lam1 - c, b])
    v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
    d1 = _canonical(v / np.linalg.norm(v))
    d2 = _canonical(np.array([-d1[1], d1[0]]))
    return np.vstack([d1, d2]), scale * np.array([lam1, lam2])


def pca_box(samples) -> PcaBox:
    if not isinstance(samples, SampleSet):
        samples = SampleSet(samples)
    if samples.count < 2:
        raise InsufficientData(f"PCA box needs at least 2 samples, got {samples.count}")
    w = samples.samples
    mean = w.mean(axis=0)
    z = w - mean
    cov = z.T @ z / (len(w) - 1)
    dirs, _ = principal_directions(cov)
    proj = z @ dirs.T
    return PcaBox(mean=mean, directions=dirs, lower=proj.min(axis=0), upper=proj.max(axis=0))


def to_halfspaces(box: PcaBox) -> PolyhedralSet:
    d1, d2 = box.directions
    off = box.directions @ box.mean
    G = np.vstack([d1, -d1, d2, -d2])
    h = np.array([
        box.upper[0] + off[0],
        -box.lower[0] - off[0],
        box.upper[1] + off[1],
        -box.lower[1] - off[1],
    ])
    return PolyhedralSet(G, h, witness=box.mean.copy())


def singleton(point=(0.0, 0.0)) -> PcaBox:
    """Degenerate box holding one point."""
    return PcaBox(mean=np.asarray(point, dtype=float), directions=np.eye(2),
                  lower=np.zeros(2), upper=np.zeros(2))


def contains(pset: PolyhedralSet, omega, tol=DEFAULT_TOL):
    omega = np.asarray(omega, dtype=float)
    return bool(np.all(pset.G @ omega <= pset.h + tol))


def contains_many(pset: PolyhedralSet, points, tol=DEFAULT_TOL):
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.all(pts @ pset.G.T <= pset.h + tol, axis=1)


def max_excess(pset: PolyhedralSet, points):
    """Largest ``G w - h`` over the points; nonpositive iff all are contained."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return -np.inf
    return float(np.max(pts @ pset.G.T - pset.h))


def box_vertices(box: PcaBox):
    """Corners in counter-clockwise order (duplicates kept for degenerate boxes)."""
    d1, d2 = box.directions
    lo, hi = box.lower, box.upper
    corners = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
    pts = np.array([box.mean + e1 * d1 + e2 * d2 for e1, e2 in corners])
    # d_2 may be a clockwise rotation of d_1 after sign canonicalisation
    if d1[0] * d2[1] - d1[1] * d2[0] < 0:
        pts = pts[::-1]
    return pts


def parametric_point(box: PcaBox, alpha):
    """Point of the box for interpolation weights ``alpha`` in [0, 1]^2."""
    alpha = np.asarray(alpha, dtype=float)
    coord = alpha * box.upper + (1.0 - alpha) * box.lower
    return box.mean + coord @ box.directions


def validate_coverage(epsilon, beta, trials, seed=0, draws=10_000, sampler=None):
    """Monte-Carlo check of the sample-count guarantee.

    Each trial fits a box to ``required_sample_count(epsilon, beta)``
    draws and measures the fraction of ``draws`` fresh samples inside.
    Returns the per-trial inside fractions.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    n = required_sample_count(epsilon, beta, 2)
    rng = np.random.default_rng(seed)
    if sampler is None:
        sampler = default_displacement_sampler
    out = np.empty(trials)
    for i in range(trials):
        pset = to_halfspaces(pca_box(sampler(rng, n)))
        out[i] = contains_many(pset, sampler(rng, draws)).mean()
    return out


def default_displacement_sampler(rng, n):
    """Correlated Gaussian displacements, the reference distribution for validation."""
    cov = np.array([[0.30, 0.12], [0.12, 0.08]])
    return rng.multivariate_normal([1.0, 0.2], cov, size=n)


def coverage_threshold(trials, beta, confidence=0.99):
    """Minimum passing-trial count: lower binomial quantile at the given confidence."""
    from scipy.stats import binom

    return int(binom.ppf(1.0 - confidence, trials, 1.0 - beta))
