"""Least-squares fits for the battery-power map, torque envelope and road curvature."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .dynamics import MotorPowerModel, RoadModel, physical_battery_power

BATTERY_REGRESSORS = ("1", "omega", "tau", "omega^2", "omega*tau", "tau^2", "omega^3")


class FitError(ValueError):
    """Least-squares problem is ill-posed."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True)
class FitResult:
    coeffs: np.ndarray
    r_squared: float
    residual_ss: float


def least_squares(design, target, names=None):
    """Ordinary least squares with an explicit rank check.

    Raises ``FitError`` naming the columns that a pivoted QR factorisation
    finds linearly dependent on the others.
    """
    design = np.asarray(design, dtype=float)
    target = np.asarray(target, dtype=float).ravel()
    n, p = design.shape
    if n < p:
        raise FitError(f"need at least {p} samples, got {n}", columns=range(n, p))
    # column-equilibrate so rank detection is scale free
    scale = np.linalg.norm(design, axis=0)
    scale[scale == 0] = 1.0
    scaled = design / scale
    _, r, piv = qr(scaled, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > max(n, p) * np.finfo(float).eps * diag[0])) if diag.size else 0
    if rank < p:
        bad = sorted(int(i) for i in piv[rank:])
        label = [names[i] for i in bad] if names else bad
        raise FitError(f"regressor matrix is rank deficient (rank {rank} < {p}); dependent columns {label}",
                       columns=bad)
    sol, *_ = np.linalg.lstsq(scaled, target, rcond=None)
    coeffs = sol / scale
    resid = target - design @ coeffs
    rss = float(resid @ resid)
    tss = float(np.sum((target - target.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)
    return FitResult(coeffs, r2, rss)


def battery_design(tau_m, omega_m):
    t = np.asarray(tau_m, dtype=float).ravel()
    w = np.asarray(omega_m, dtype=float).ravel()
    return np.column_stack([np.ones_like(w), w, t, w**2, w * t, t**2, w**3])


def fit_battery_power_model(tau_m, omega_m, p_b, base: MotorPowerModel | None = None):
    """Fit the cubic battery-power polynomial; returns ``(MotorPowerModel, r_squared)``."""
    res = least_squares(battery_design(tau_m, omega_m), p_b, BATTERY_REGRESSORS)
    base = base or MotorPowerModel()
    return MotorPowerModel(c=tuple(res.coeffs), loss=base.loss, xi=base.xi), res.r_squared


def fit_torque_limit(v_x, tau_max, base: MotorPowerModel | None = None):
    """Fit the cubic torque envelope in longitudinal speed; returns ``(model, r_squared)``."""
    v = np.asarray(v_x, dtype=float).ravel()
    res = least_squares(np.column_stack([v**3, v**2, v, np.ones_like(v)]), tau_max,
                        ("v^3", "v^2", "v", "1"))
    base = base or MotorPowerModel()
    return MotorPowerModel(c=base.c, loss=base.loss, xi=tuple(res.coeffs)), res.r_squared


def fit_curvature(s_x, rho):
    """Fit the quadratic curvature preview; returns ``(RoadModel, r_squared)``."""
    s = np.asarray(s_x, dtype=float).ravel()
    res = least_squares(np.column_stack([s**2, s, np.ones_like(s)]), rho, ("s^2", "s", "1"))
    k1, k2, k3 = res.coeffs
    return RoadModel(float(k1), float(k2), float(k3)), res.r_squared


def synthetic_battery_samples(model: MotorPowerModel | None = None, tau_max=400.0,
                              omega_max=700.0, n=25):
    """Grid of ``(tau_m, omega_m, P_b)`` generated from the physical loss model.

    Torque spans motoring and regeneration.
    """
    model = model or MotorPowerModel()
    t, w = np.meshgrid(np.linspace(-tau_max, tau_max, n), np.linspace(0.0, omega_max, n))
    t, w = t.ravel(), w.ravel()
    return t, w, physical_battery_power(t, w, model)


def synthetic_torque_envelope(peak_torque=460.0, peak_power=1.6e5, speed_ratio=7.94 / 0.33,
                              v_max=30.0, n=61):
    """Constant-torque / constant-power motor envelope sampled over speed.

    Returns ``(v_x, tau_max)``.
    """
    v = np.linspace(0.0, v_max, n)
    omega = speed_ratio * v
    with np.errstate(divide="ignore"):
        tau = np.minimum(peak_torque, peak_power / np.where(omega > 0, omega, np.inf))
    tau = np.where(omega > 0, tau, peak_torque)
    return v, tau
