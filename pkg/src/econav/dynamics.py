"""Electric-vehicle plant model.

Dynamic bicycle model with linear tyres, a battery state-of-energy
channel driven by a polynomial battery-power map, and a quadratic road
curvature preview.  Every model function is written once and evaluated
either on floats/numpy arrays (plant, oracles) or on CasADi symbols
(optimal control problem).

State order: ``s_x, e_y, e_psi, v_x, v_y, r, gamma, p_x, p_y, psi``.
Input order: ``a, delta, d``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.integrate import cumulative_trapezoid

try:  # CasADi is a hard dependency of the OCP but not of the plant
    import casadi as ca
except ImportError:  # pragma: no cover
    ca = None

STATE_NAMES = ("s_x", "e_y", "e_psi", "v_x", "v_y", "r", "gamma", "p_x", "p_y", "psi")
INPUT_NAMES = ("a", "delta", "d")
NX = len(STATE_NAMES)
NU = len(INPUT_NAMES)

# velocity floor inside the slip-angle arctangents
V_EPS = 0.1
KWH = 3.6e6

STANDARD = "standard"
AS_PRINTED = "as-printed"


class ModelError(ValueError):
    """Invalid model configuration."""


class NumericError(ArithmeticError):
    """Non-finite value produced by a model evaluation."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class VehicleParams:
    m: float = 1500.0
    I_z: float = 3000.0
    l_F: float = 1.188
    l_R: float = 1.512
    C_F: float = 6.3e4
    C_R: float = 6.3e4
    N_d: float = 7.94
    r_w: float = 0.33
    eta_i: float = 0.95
    eta_b: float = 1.0
    E_b: float = 54.28 * KWH  # joules

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ModelError(f"vehicle parameter {f.name} must be positive")
        if self.eta_i > 1 or self.eta_b > 1:
            raise ModelError("efficiencies must not exceed 1")

    @property
    def torque_per_accel(self):
        """Motor torque per unit longitudinal acceleration, N*m/(m/s^2)."""
        return self.m * self.r_w / (self.eta_i * self.N_d)

    @property
    def speed_ratio(self):
        """Motor speed per unit longitudinal speed, (rad/s)/(m/s)."""
        return self.N_d / self.r_w


# Default fitted battery map (c5 = 1 makes the w*t term the mechanical power); c6 = c7 = 0
DEFAULT_BATTERY_COEFFS = (2238e-14, -2.63e-14, 8.64e-14, 2.06e-19, 1.0, 0.0, 0.0)
DEFAULT_TORQUE_COEFFS = (0.0036, -0.3661, 3.663, 454.2)
DEFAULT_LOSS_COEFFS = (0.2, 2.0, 1e-5, 1e-3, 50.0)


@dataclass(frozen=True)
class MotorPowerModel:
    """Battery-power polynomial, motor loss model and torque envelope.

    ``c`` multiplies the regressors ``1, w, t, w^2, w*t, t^2, w^3`` with
    ``w`` the motor speed and ``t`` the motor torque.  ``loss`` holds
    ``(k_c, k_i, k_w, k_f, k_0)`` and ``xi`` the torque-limit cubic in
    ``v_x``, highest power first.
    """

    c: tuple = DEFAULT_BATTERY_COEFFS
    loss: tuple = DEFAULT_LOSS_COEFFS
    xi: tuple = DEFAULT_TORQUE_COEFFS

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        object.__setattr__(self, "loss", tuple(float(v) for v in self.loss))
        object.__setattr__(self, "xi", tuple(float(v) for v in self.xi))
        if len(self.c) != 7 or len(self.loss) != 5 or len(self.xi) != 4:
            raise ModelError("motor model needs 7 power, 5 loss and 4 torque coefficients")

    def check_envelope(self, v_max=30.0, tau_max=400.0, omega_max=700.0, n=81):
        """Raise ``ModelError`` if the loss map or torque limit leave their valid range."""
        tau, omega = np.meshgrid(np.linspace(0, tau_max, n), np.linspace(0, omega_max, n))
        worst = float(np.min(power_loss(tau, omega, self)))
        if worst < 0:
            raise ModelError(f"motor loss model is negative on the operating envelope (min {worst:.3g} W)")
        v = np.linspace(0.0, v_max, n)
        low = float(np.min(torque_limit(v, self)))
        if low <= 0:
            raise ModelError(f"torque limit is not positive on [0, {v_max}] m/s (min {low:.3g} N*m)")


@dataclass(frozen=True)
class RoadModel:
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0

    def heading(self, s):
        """Centre-line heading, the integral of curvature from s = 0."""
        return self.k1 * s**3 / 3.0 + self.k2 * s**2 / 2.0 + self.k3 * s

    def centerline(self, s, n=2001):
        """Inertial coordinates of the centre line at arc length(s) ``s``.

        The line starts at the origin with heading zero.
        """
        s = np.asarray(s, dtype=float)
        lo = min(float(np.min(s)), 0.0) - 1.0
        hi = max(float(np.max(s)), 0.0) + 1.0
        grid = np.linspace(lo, hi, n)
        th = self.heading(grid)
        xs = cumulative_trapezoid(np.cos(th), grid, initial=0.0)
        ys = cumulative_trapezoid(np.sin(th), grid, initial=0.0)
        xs -= np.interp(0.0, grid, xs)
        ys -= np.interp(0.0, grid, ys)
        return np.stack([np.interp(s, grid, xs), np.interp(s, grid, ys)], axis=-1)

    def to_inertial(self, s, e):
        """Map road coordinates (arc length, lateral offset) to the inertial frame."""
        c = self.centerline(s)
        th = self.heading(np.asarray(s, dtype=float))
        normal = np.stack([-np.sin(th), np.cos(th)], axis=-1)
        return c + np.asarray(e, dtype=float)[..., None] * normal


@dataclass(frozen=True)
class Bounds:
    a_min: float = -4.0
    a_max: float = 7.4
    d_min: float = -5.75
    d_max: float = 0.0
    delta_min: float = -0.5
    delta_max: float = 0.5
    v_x_min: float = 0.0
    v_x_max: float = 30.0
    e_y_min: float = -4.0
    e_y_max: float = 4.0
    gamma_min: float = 0.1
    gamma_max: float = 0.9

    def __post_init__(self):
        for name in ("a", "d", "delta", "v_x", "e_y", "gamma"):
            if getattr(self, name + "_min") > getattr(self, name + "_max"):
                raise ModelError(f"bounds for {name}: min exceeds max")

    def input_box(self):
        lo = np.array([self.a_min, self.delta_min, self.d_min])
        hi = np.array([self.a_max, self.delta_max, self.d_max])
        return lo, hi

    def state_box(self):
        lo = np.full(NX, -np.inf)
        hi = np.full(NX, np.inf)
        lo[[3, 1, 6]] = self.v_x_min, self.e_y_min, self.gamma_min
        hi[[3, 1, 6]] = self.v_x_max, self.e_y_max, self.gamma_max
        return lo, hi


@dataclass
class VehicleState:
    s_x: float = 0.0
    e_y: float = 0.0
    e_psi: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0
    r: float = 0.0
    gamma: float = 0.9
    p_x: float = 0.0
    p_y: float = 0.0
    psi: float = 0.0

    def as_array(self):
        return np.array([getattr(self, n) for n in STATE_NAMES], dtype=float)

    @classmethod
    def from_array(cls, x):
        return cls(*(float(v) for v in np.asarray(x, dtype=float).ravel()[:NX]))

    @property
    def position(self):
        return np.array([self.p_x, self.p_y])


@dataclass
class ControlInput:
    a: float = 0.0
    delta: float = 0.0
    d: float = 0.0

    def as_array(self):
        return np.array([self.a, self.delta, self.d], dtype=float)

    @classmethod
    def from_array(cls, u):
        u = np.asarray(u, dtype=float).ravel()
        return cls(float(u[0]), float(u[1]), float(u[2]))


def _is_symbolic(*args):
    return ca is not None and any(isinstance(a, (ca.SX, ca.MX)) for a in args)


def _vec(x):
    if isinstance(x, (VehicleState, ControlInput)):
        return x.as_array()
    return x


def _max(a, b):
    if _is_symbolic(a, b):
        return ca.fmax(a, b)
    return np.maximum(a, b)


_NUMPY_NAMES = {"atan": "arctan"}


def _fn(name, *args):
    if _is_symbolic(*args):
        return getattr(ca, name)
    return getattr(np, _NUMPY_NAMES.get(name, name))


def slip_angles(state, delta, params: VehicleParams, v_eps=V_EPS):
    """Front and rear tyre slip angles (rad)."""
    x = _vec(state)
    v_x, v_y, r = x[3], x[4], x[5]
    vx = _max(v_x, v_eps)
    atan = _fn("atan", v_x, delta)
    alpha_f = atan((v_y + params.l_F * r) / vx) - delta
    alpha_r = atan((v_y - params.l_R * r) / vx)
    return alpha_f, alpha_r


def lateral_forces(alpha_f, alpha_r, params: VehicleParams):
    return -2.0 * params.C_F * alpha_f, -2.0 * params.C_R * alpha_r


def motor_operating_point(state, a, params: VehicleParams):
    """Motor torque (N*m) and speed (rad/s) for acceleration ``a`` at the state's speed."""
    x = _vec(state)
    return params.torque_per_accel * a, params.speed_ratio * x[3]


def battery_power(tau_m, omega_m, model: MotorPowerModel):
    """Battery output power in W; negative while regenerating."""
    c1, c2, c3, c4, c5, c6, c7 = model.c
    w, t = omega_m, tau_m
    return c1 + c2 * w + c3 * t + c4 * w**2 + c5 * w * t + c6 * t**2 + c7 * w**3


def battery_power_gradient(tau_m, omega_m, model: MotorPowerModel):
    """Partial derivatives of :func:`battery_power` w.r.t. torque and speed."""
    _, c2, c3, c4, c5, c6, c7 = model.c
    d_tau = c3 + c5 * omega_m + 2 * c6 * tau_m
    d_omega = c2 + 2 * c4 * omega_m + c5 * tau_m + 3 * c7 * omega_m**2
    return d_tau, d_omega


def power_loss(tau_m, omega_m, model: MotorPowerModel):
    k_c, k_i, k_w, k_f, k_0 = model.loss
    return k_c * tau_m**2 + k_i * omega_m + k_w * omega_m**3 + k_f * omega_m**2 + k_0


def physical_battery_power(tau_m, omega_m, model: MotorPowerModel):
    """Mechanical motor power plus motor losses; the data the polynomial is fitted to."""
    return tau_m * omega_m + power_loss(tau_m, omega_m, model)


def torque_limit(v_x, model: MotorPowerModel):
    x1, x2, x3, x4 = model.xi
    return ((x1 * v_x + x2) * v_x + x3) * v_x + x4


def curvature(s_x, road: RoadModel):
    return (road.k1 * s_x + road.k2) * s_x + road.k3


def lateral_dissipation(state, u, params: VehicleParams, v_eps=V_EPS):
    """Tyre-slip power (W): lateral force times lateral slip velocity, clipped at zero."""
    x, u = _vec(state), _vec(u)
    a_f, a_r = slip_angles(x, u[1], params, v_eps)
    f_f, f_r = lateral_forces(a_f, a_r, params)
    v_x, v_y, r = x[3], x[4], x[5]
    p = -(f_f * (v_y + params.l_F * r - v_x * u[1]) + f_r * (v_y - params.l_R * r))
    return _max(p, 0.0)


def continuous_dynamics(state, u, params: VehicleParams, model: MotorPowerModel,
                        road: RoadModel, variant=STANDARD, v_eps=V_EPS):
    """Time derivative of the 10-dimensional EV state.

    Works on numpy arrays and on CasADi symbols.  ``variant`` selects
    the curvilinear kinematics: ``"standard"`` (small-angle road-frame
    form) or ``"as-printed"`` (the transposed lateral terms).
    """
    x, u = _vec(state), _vec(u)
    symbolic = _is_symbolic(x, u)
    sin, cos = _fn("sin", x, u), _fn("cos", x, u)
    s_x, e_y, e_psi, v_x, v_y, r, gamma, p_x, p_y, psi = (x[i] for i in range(NX))
    a, delta, d = u[0], u[1], u[2]

    a_f, a_r = slip_angles(x, delta, params, v_eps)
    f_f, f_r = lateral_forces(a_f, a_r, params)
    tau, omega = motor_operating_point(x, a, params)
    p_b = battery_power(tau, omega, model)
    rho = curvature(s_x, road)

    if variant == STANDARD:
        de_y = v_y + v_x * e_psi
        de_psi = r - v_x * rho
    elif variant == AS_PRINTED:
        de_y = v_x + e_psi * v_y
        de_psi = v_y - v_x * rho
    else:
        raise ModelError(f"unknown kinematics variant {variant!r}")

    m = params.m
    out = [
        v_x,
        de_y,
        de_psi,
        a + d - (f_f * sin(delta) - m * v_y * r) / m,
        (f_f * cos(delta) + f_r - m * v_x * r) / m,
        (f_f * params.l_F * cos(delta) - f_r * params.l_R) / params.I_z,
        -params.eta_b * p_b / params.E_b,
        v_x * cos(psi) - v_y * sin(psi),
        v_x * sin(psi) + v_y * cos(psi),
        r,
    ]
    if symbolic:
        return ca.vertcat(*out)
    out = np.array(out, dtype=float)
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise NumericError(f"non-finite derivative of {STATE_NAMES[bad[0]]}", index=int(bad[0]))
    return out


def dynamics_jacobian(state, u, params: VehicleParams, model: MotorPowerModel,
                      road: RoadModel, variant=STANDARD, v_eps=V_EPS):
    """Analytic Jacobians ``(df/dx, df/du)`` of :func:`continuous_dynamics`."""
    x = np.asarray(_vec(state), dtype=float)
    u = np.asarray(_vec(u), dtype=float)
    s_x, e_y, e_psi, v_x, v_y, r, gamma, p_x, p_y, psi = x
    a, delta, d = u
    m, lf, lr, iz = params.m, params.l_F, params.l_R, params.I_z
    jx = np.zeros((NX, NX))
    ju = np.zeros((NX, NU))

    # slip angles and forces as functions of (v_x, v_y, r, delta)
    floor_active = v_x <= v_eps
    vx = max(v_x, v_eps)
    dvx = 0.0 if floor_active else 1.0
    qf = (v_y + lf * r) / vx
    qr = (v_y - lr * r) / vx
    gf = 1.0 / (1.0 + qf**2)
    gr = 1.0 / (1.0 + qr**2)
    alpha_f = np.arctan(qf) - delta
    alpha_r = np.arctan(qr)
    f_f, f_r = lateral_forces(alpha_f, alpha_r, params)
    # d alpha / d (v_x, v_y, r)
    daf = np.array([-gf * qf / vx * dvx, gf / vx, gf * lf / vx])
    dar = np.array([-gr * qr / vx * dvx, gr / vx, -gr * lr / vx])
    dff = -2 * params.C_F * daf
    dfr = -2 * params.C_R * dar
    dff_ddelta = 2 * params.C_F
    sd, cd = np.sin(delta), np.cos(delta)
    idx = [3, 4, 5]

    rho = curvature(s_x, road)
    drho = 2 * road.k1 * s_x + road.k2

    jx[0, 3] = 1.0
    if variant == STANDARD:
        jx[1, 4], jx[1, 3], jx[1, 2] = 1.0, e_psi, v_x
        jx[2, 5], jx[2, 3], jx[2, 0] = 1.0, -rho, -v_x * drho
    elif variant == AS_PRINTED:
        jx[1, 3], jx[1, 2], jx[1, 4] = 1.0, v_y, e_psi
        jx[2, 4], jx[2, 3], jx[2, 0] = 1.0, -rho, -v_x * drho
    else:
        raise ModelError(f"unknown kinematics variant {variant!r}")

    # v_x
    jx[3, idx] = -sd / m * dff
    jx[3, 4] += r
    jx[3, 5] += v_y
    ju[3, 0] = 1.0
    ju[3, 2] = 1.0
    ju[3, 1] = -(dff_ddelta * sd + f_f * cd) / m
    # v_y
    jx[4, idx] = (cd * dff + dfr) / m
    jx[4, 3] += -r
    jx[4, 5] += -v_x
    ju[4, 1] = (dff_ddelta * cd - f_f * sd) / m
    # r
    jx[5, idx] = (lf * cd * dff - lr * dfr) / iz
    ju[5, 1] = lf * (dff_ddelta * cd - f_f * sd) / iz
    # gamma
    tau, omega = motor_operating_point(x, a, params)
    dp_tau, dp_omega = battery_power_gradient(tau, omega, model)
    k = -params.eta_b / params.E_b
    jx[6, 3] = k * dp_omega * params.speed_ratio
    ju[6, 0] = k * dp_tau * params.torque_per_accel
    # inertial kinematics
    sp, cp = np.sin(psi), np.cos(psi)
    jx[7, 3], jx[7, 4], jx[7, 9] = cp, -sp, -v_x * sp - v_y * cp
    jx[8, 3], jx[8, 4], jx[8, 9] = sp, cp, v_x * cp - v_y * sp
    jx[9, 5] = 1.0
    return jx, ju


def euler_step(state, u, T_s, params: VehicleParams, model: MotorPowerModel,
               road: RoadModel, variant=STANDARD, v_eps=V_EPS):
    """One explicit Euler step ``x + T_s f(x, u)``.

    Returns the same kind of object it was given (``VehicleState`` or array).
    """
    if not T_s > 0:
        raise ModelError("sampling time must be positive")
    x = _vec(state)
    nxt = x + T_s * continuous_dynamics(x, u, params, model, road, variant, v_eps)
    if isinstance(state, VehicleState):
        return VehicleState.from_array(nxt)
    return nxt
