"""Finite-horizon optimal control problem with robust avoidance certificates.

The NLP is assembled symbolically with CasADi once per problem structure
(horizon, obstacle count, halfspace counts, vehicle model) and solved with
IPOPT.  Per-step data (initial state, destination, weights, obstacle
polytopes, uncertainty sets) enter as parameters, so re-solving in a
receding-horizon loop does not rebuild the problem.

Decision vector layout: states x_1..x_N, inputs u_0..u_{N-1}, then per
obstacle its multipliers lam (N x rows(A)), mu (N x rows(G)) and slacks.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import casadi as ca
import numpy as np

from .dynamics import (NU, NX, STANDARD, Bounds, MotorPowerModel, RoadModel, VehicleParams,
                       continuous_dynamics, euler_step, torque_limit)

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max-iter"
INFEASIBLE_RELAXED = "infeasible-relaxed"
FAILED = "failed"

SLACK_REPORT = 1e-6


class AssemblyError(ValueError):
    pass


class SolverNumericError(ArithmeticError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class OcpWeights:
    Q1: float = 0.0048
    Q2: float = 5e-4
    Q3: float = 10.0
    R1: float = 0.0025
    R2: float = 0.0125
    R3: float = 0.05
    P1: float = 0.4
    P2: float = 10.0
    W_s: float = 1e4
    e_y_max: float = 4.0
    e_psi_max: float = 0.5
    a_max: float = 7.4
    delta_max: float = 0.5
    d_min: float = -5.75
    energy_aware: bool = True
    cost_form: str = "normalized"

    def __post_init__(self):
        for name in ("Q1", "Q2", "Q3", "R1", "R2", "R3", "P1", "P2", "W_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be nonnegative")
        for name in ("e_y_max", "e_psi_max", "a_max", "delta_max", "d_min"):
            if getattr(self, name) == 0:
                raise ValueError(f"normaliser {name} must be nonzero")
        if self.cost_form not in ("normalized", "quadratic"):
            raise ValueError(f"unknown cost form {self.cost_form!r}")

    def effective(self):
        """Weights actually used: the energy terms vanish when not energy aware."""
        if self.energy_aware:
            return self
        return replace(self, Q3=0.0, P2=0.0)

    def vector(self):
        w = self.effective()
        return np.array([w.Q1, w.Q2, w.Q3, w.R1, w.R2, w.R3, w.P1, w.P2, w.W_s,
                         w.e_y_max, w.e_psi_max, w.a_max, w.delta_max, w.d_min])


N_WEIGHT_PARAMS = 14


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 500
    warm_start: bool = True
    regularization: float = 1e-6  # quadratic weight on multipliers, removes flat directions
    trace: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("solver tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


def _unpack(wvec):
    """Weights from a plain sequence (numeric or symbolic), in ``OcpWeights.vector`` order."""
    return [wvec[i] for i in range(N_WEIGHT_PARAMS)]


def stage_cost(x, u, w, dest, form=None):
    """Normalised stage cost for state ``x`` and input ``u``.

    ``w`` is an :class:`OcpWeights` or its parameter vector; ``dest`` the
    10-vector destination whose ``gamma`` entry is the reference energy level.
    """
    if isinstance(w, OcpWeights):
        form = form or w.cost_form
        w = w.vector()
    form = form or "normalized"
    x, u, dest = _arr(x), _arr(u), _arr(dest)
    Q1, Q2, Q3, R1, R2, R3, P1, P2, W_s, eym, epm, am, dm, dmin = _unpack(w)
    if form == "quadratic":
        qd = [0, Q1, Q2, 0, 0, 0, Q3, 0, 0, 0]
        return (sum(qd[i] * (x[i] - dest[i]) ** 2 for i in range(NX) if _nz(qd[i]))
                + R1 * u[0] ** 2 + R2 * u[1] ** 2 + R3 * u[2] ** 2)
    return (Q1 * ((x[1] - dest[1]) / eym) ** 2 + Q2 * (x[2] / epm) ** 2 + Q3 * (x[6] - dest[6]) ** 2
            + R1 * (u[0] / am) ** 2 + R2 * (u[1] / dm) ** 2 + R3 * (u[2] / dmin) ** 2)


def terminal_cost(x, w, dest, form=None):
    if isinstance(w, OcpWeights):
        form = form or w.cost_form
        w = w.vector()
    form = form or "normalized"
    x, dest = _arr(x), _arr(dest)
    Q1, Q2, Q3, R1, R2, R3, P1, P2, *_ = _unpack(w)
    if form == "quadratic":
        pd = [P1, Q1, Q2, 0, 0, 0, P2, 0, 0, 0]
        return sum(pd[i] * (x[i] - dest[i]) ** 2 for i in range(NX) if _nz(pd[i]))
    if not isinstance(dest[0], (ca.SX, ca.MX)) and dest[0] == 0:
        raise ValueError("destination arc length must be nonzero")
    return P1 * ((x[0] - dest[0]) / dest[0]) ** 2 + P2 * (x[6] - dest[6]) ** 2


def _nz(v):
    return isinstance(v, (ca.SX, ca.MX)) or v != 0


def _arr(v):
    if hasattr(v, "as_array"):
        return v.as_array()
    if isinstance(v, (ca.SX, ca.MX, ca.DM)):
        return v
    return np.asarray(v, dtype=float)


@dataclass
class NlpProblem:
    """Symbolic NLP ``min f(w; p) s.t. lbg <= g(w; p) <= ubg, lbx <= w <= ubx``."""

    w: ca.SX
    p: ca.SX
    f: ca.SX
    g: ca.SX
    _fns: dict = field(default_factory=dict, repr=False)
    _solvers: dict = field(default_factory=dict, repr=False)

    def fn(self, name):
        if name not in self._fns:
            w, p = self.w, self.p
            expr = {
                "f": self.f,
                "g": self.g,
                "grad_f": ca.gradient(self.f, w),
                "jac_g": ca.jacobian(self.g, w),
            }[name]
            self._fns[name] = ca.Function(name, [w, p], [expr])
        return self._fns[name]

    def solver(self, cfg: SolverConfig, warm: bool, push=1e-6):
        key = (cfg.tol, cfg.max_iter, cfg.trace, warm, push)
        if key not in self._solvers:
            opts = {
                "print_time": False,
                "ipopt.print_level": 0,
                "ipopt.sb": "yes",
                "ipopt.tol": cfg.tol,
                "ipopt.constr_viol_tol": cfg.tol,
                "ipopt.compl_inf_tol": cfg.tol,
                "ipopt.dual_inf_tol": cfg.tol,
                "ipopt.acceptable_iter": 0,
                "ipopt.max_iter": cfg.max_iter,
                "ipopt.nlp_scaling_method": "none",
                "ipopt.bound_relax_factor": 0.0,
                "ipopt.mu_strategy": "adaptive",
            }
            if warm:
                opts.update({
                    "ipopt.warm_start_init_point": "yes",
                    "ipopt.warm_start_bound_push": push,
                    "ipopt.warm_start_slack_bound_push": push,
                    "ipopt.warm_start_mult_bound_push": push,
                })
            nlp = {"x": self.w, "p": self.p, "f": self.f, "g": self.g}
            self._solvers[key] = ca.nlpsol("ocp", "ipopt", nlp, opts)
        return self._solvers[key]


@dataclass
class NlpSpec:
    problem: NlpProblem
    p_value: np.ndarray
    lbx: np.ndarray
    ubx: np.ndarray
    lbg: np.ndarray
    ubg: np.ndarray
    w0: np.ndarray
    var_groups: dict = field(default_factory=dict)  # name -> (offset, rows, width)
    row_groups: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_var(self):
        return int(self.problem.w.numel())

    @property
    def n_con(self):
        return int(self.problem.g.numel())

    def unpack(self, w, name):
        off, rows, width = self.var_groups[name]
        return np.asarray(w, dtype=float).ravel()[off:off + rows * width].reshape(rows, width)

    @classmethod
    def from_expressions(cls, w, f, g=None, p=None, lbx=None, ubx=None, lbg=None, ubg=None,
                         p_value=None, w0=None):
        """Wrap arbitrary CasADi expressions, e.g. for small test problems."""
        g = ca.SX(0, 1) if g is None else g
        p = ca.SX.sym("p", 0) if p is None else p
        n, m = w.numel(), g.numel()
        inf = np.full(n, np.inf)
        return cls(NlpProblem(w, p, f, g),
                   np.zeros(p.numel()) if p_value is None else np.asarray(p_value, float),
                   -inf if lbx is None else np.asarray(lbx, float),
                   inf if ubx is None else np.asarray(ubx, float),
                   np.full(m, -np.inf) if lbg is None else np.asarray(lbg, float),
                   np.full(m, np.inf) if ubg is None else np.asarray(ubg, float),
                   np.zeros(n) if w0 is None else np.asarray(w0, float))


@dataclass
class KktReport:
    stationarity: float  # scaled like IPOPT's dual infeasibility
    stationarity_raw: float
    primal: float
    complementarity: float
    dual_scale: float

    def within(self, tol):
        return self.stationarity <= tol and self.primal <= tol and self.complementarity <= tol


@dataclass
class KktPoint:
    w: np.ndarray
    lam_g: np.ndarray
    lam_x: np.ndarray


@dataclass
class HorizonSolution:
    states: np.ndarray
    inputs: np.ndarray
    lam: list
    mu: list
    slacks: np.ndarray  # (M, N)
    objective: float
    status: str
    kkt: KktReport
    wall_time: float
    w: np.ndarray
    lam_g: np.ndarray
    lam_x: np.ndarray
    iterations: int = 0
    trace: list = field(default_factory=list)
    solver_message: str = ""

    @property
    def ok(self):
        return self.status == CONVERGED

    @property
    def usable(self):
        """Converged, or a best-effort iterate after the iteration cap."""
        return self.status in (CONVERGED, MAX_ITER)

    @property
    def relaxed(self):
        return self.slacks.size > 0 and float(self.slacks.max()) > SLACK_REPORT

    @property
    def slack_sum(self):
        return float(self.slacks.sum()) if self.slacks.size else 0.0


_TEMPLATES: dict = {}


def _template(N, rows, params: VehicleParams, model: MotorPowerModel, road: RoadModel, T_s,
              variant, cost_form):
    key = (N, tuple(rows), params, model, road, T_s, variant, cost_form)
    if key in _TEMPLATES:
        return _TEMPLATES[key]
    M = len(rows)
    X = ca.SX.sym("x", NX, N)
    U = ca.SX.sym("u", NU, N)
    lam = [ca.SX.sym(f"lam{m}", na, N) for m, (na, ng) in enumerate(rows)]
    mu = [ca.SX.sym(f"mu{m}", ng, N) for m, (na, ng) in enumerate(rows)]
    S = [ca.SX.sym(f"s{m}", 1, N) for m in range(M)]

    x0 = ca.SX.sym("x0", NX)
    dest = ca.SX.sym("dest", NX)
    wts = ca.SX.sym("weights", N_WEIGHT_PARAMS)
    reg = ca.SX.sym("reg")
    obs = []
    for m, (na, ng) in enumerate(rows):
        A = ca.SX.sym(f"A{m}", na, 2)
        b = ca.SX.sym(f"b{m}", na)
        ds = ca.SX.sym(f"dsafe{m}")
        G = [ca.SX.sym(f"G{m}_{k}", ng, 2) for k in range(N)]
        h = [ca.SX.sym(f"h{m}_{k}", ng) for k in range(N)]
        obs.append((A, b, ds, G, h))

    w_parts = [ca.vec(X), ca.vec(U)]
    var_groups = {"x": (0, N, NX), "u": (NX * N, N, NU)}
    off = (NX + NU) * N
    for m, (na, ng) in enumerate(rows):
        w_parts += [ca.vec(lam[m]), ca.vec(mu[m]), ca.vec(S[m])]
        var_groups[f"lam{m}"] = (off, N, na)
        off += na * N
        var_groups[f"mu{m}"] = (off, N, ng)
        off += ng * N
        var_groups[f"s{m}"] = (off, N, 1)
        off += N
    w = ca.vertcat(*w_parts)

    p_parts = [x0, dest, wts, reg]
    for A, b, ds, G, h in obs:
        p_parts += [ca.vec(A), b, ds]
        for k in range(N):
            p_parts += [ca.vec(G[k]), h[k]]
    p = ca.vertcat(*p_parts)

    wv = _unpack(wts)
    J = 0
    g_dyn, g_trq, g_rob = [], [], []
    prev = x0
    kt = params.torque_per_accel
    for k in range(N):
        xk = X[:, k]
        uk = U[:, k]
        J += stage_cost(prev, uk, wv, dest, cost_form)
        g_dyn.append(xk - (prev + T_s * continuous_dynamics(prev, uk, params, model, road, variant)))
        tmax = torque_limit(prev[3], model)
        g_trq += [kt * uk[0] - tmax, -kt * uk[0] - tmax]
        prev = xk
    J += terminal_cost(X[:, N - 1], wv, dest, cost_form)
    for m, (A, b, ds, G, h) in enumerate(obs):
        for k in range(N):
            pk = X[7:9, k]
            lk = lam[m][:, k]
            mk = mu[m][:, k]
            z = ca.mtimes(A.T, lk)
            margin = ca.dot(ca.mtimes(A, pk) - b, lk) - ca.dot(mk, h[k]) - ds + S[m][0, k]
            g_rob += [margin, ca.dot(z, z), z - ca.mtimes(G[k].T, mk)]
        J += wv[8] * ca.sumsqr(S[m]) + reg * (ca.sumsqr(lam[m]) + ca.sumsqr(mu[m]))
    g = ca.vertcat(*g_dyn, *g_trq, *g_rob)
    row_groups = {"dyn": (0, N, NX), "torque": (NX * N, N, 2)}
    off = (NX + 2) * N
    for m in range(M):
        row_groups[f"rob{m}"] = (off, N, 4)
        off += 4 * N
    tpl = (NlpProblem(w, p, J, g), var_groups, row_groups)
    _TEMPLATES[key] = tpl
    return tpl


def build_ocp(x0, forecasts, weights: OcpWeights, bounds: Bounds, params: VehicleParams,
              model: MotorPowerModel, road: RoadModel, N, *, T_s, dest, d_safe=(),
              variant=STANDARD, solver_cfg: SolverConfig | None = None) -> NlpSpec:
    """Assemble the horizon-``N`` problem from the current state and obstacle forecasts.

    ``forecasts`` is a sequence of :class:`~econav.obstacles.OccupancyForecast`
    (one per obstacle) and ``d_safe`` the matching safety distances.
    """
    cfg = solver_cfg or SolverConfig()
    x0 = np.asarray(_arr(x0), dtype=float)
    dest = np.asarray(_arr(dest), dtype=float)
    if len(d_safe) != len(forecasts):
        raise AssemblyError("one safety distance per obstacle is required")
    rows = []
    for m, fc in enumerate(forecasts):
        if fc.horizon < N:
            raise AssemblyError(f"forecast for obstacle {m} is missing step {fc.horizon + 1}")
        ngs = {len(s.h) for s in fc.sets[:N]}
        if len(ngs) != 1:
            raise AssemblyError(f"obstacle {m}: uncertainty sets differ in row count")
        rows.append((len(fc.base.b), ngs.pop()))
    problem, var_groups, row_groups = _template(N, rows, params, model, road, float(T_s), variant,
                                                weights.cost_form)

    p_parts = [x0, dest, weights.vector(), [cfg.regularization]]
    for fc, ds in zip(forecasts, d_safe):
        p_parts += [fc.base.A.ravel(order="F"), fc.base.b, [ds]]
        for k in range(N):
            p_parts += [fc.sets[k].G.ravel(order="F"), fc.sets[k].h]
    p_value = np.concatenate([np.asarray(v, dtype=float).ravel() for v in p_parts])

    n = problem.w.numel()
    lbx = np.full(n, -np.inf)
    ubx = np.full(n, np.inf)
    slo, shi = bounds.state_box()
    ulo, uhi = bounds.input_box()
    off = var_groups["x"][0]
    lbx[off:off + NX * N] = np.tile(slo, N)
    ubx[off:off + NX * N] = np.tile(shi, N)
    off = var_groups["u"][0]
    lbx[off:off + NU * N] = np.tile(ulo, N)
    ubx[off:off + NU * N] = np.tile(uhi, N)
    for m in range(len(forecasts)):
        for name in (f"lam{m}", f"mu{m}", f"s{m}"):
            o, r, wd = var_groups[name]
            lbx[o:o + r * wd] = 0.0

    m_rows = problem.g.numel()
    lbg = np.zeros(m_rows)
    ubg = np.zeros(m_rows)
    o, r, wd = row_groups["torque"]
    lbg[o:o + r * wd] = -np.inf
    for m in range(len(forecasts)):
        o, r, _ = row_groups[f"rob{m}"]
        blk_lo = np.tile([0.0, -np.inf, 0.0, 0.0], r)
        blk_hi = np.tile([np.inf, 1.0, 0.0, 0.0], r)
        lbg[o:o + 4 * r] = blk_lo
        ubg[o:o + 4 * r] = blk_hi

    spec = NlpSpec(problem, p_value, lbx, ubx, lbg, ubg, np.zeros(n), var_groups, row_groups,
                   meta={"N": N, "M": len(forecasts), "rows": rows, "T_s": float(T_s),
                         "x0": x0, "dest": dest, "forecasts": list(forecasts),
                         "d_safe": list(d_safe), "params": params, "model": model, "road": road,
                         "variant": variant, "bounds": bounds})
    spec.w0 = cold_start(spec)
    return spec


def cold_start(spec: NlpSpec):
    """Zero-input rollout for the states, zero inputs and multipliers, slacks at ``d_safe``."""
    meta = spec.meta
    w0 = np.zeros(spec.n_var)
    x = meta["x0"].copy()
    lo, hi = meta["bounds"].state_box()
    traj = []
    for _ in range(meta["N"]):
        x = euler_step(x, np.zeros(NU), meta["T_s"], meta["params"], meta["model"], meta["road"],
                       meta["variant"])
        traj.append(np.clip(x, lo, hi))
    off = spec.var_groups["x"][0]
    w0[off:off + NX * meta["N"]] = np.concatenate(traj)
    for m, ds in enumerate(meta["d_safe"]):
        o, r, _ = spec.var_groups[f"s{m}"]
        w0[o:o + r] = ds
    return w0


def _shift_groups(vec, groups):
    out = np.asarray(vec, dtype=float).copy()
    for off, rows, width in groups.values():
        blk = out[off:off + rows * width].reshape(rows, width)
        blk[:-1] = blk[1:].copy()
        out[off:off + rows * width] = blk.ravel()
    return out


def warm_start_shift(prev: HorizonSolution, spec: NlpSpec):
    """Shift the previous solution one step forward, duplicating the last step.

    Returns ``(w0, lam_g0, lam_x0)`` for ``spec``; the new initial state
    already lives in ``spec``'s parameters.
    """
    if prev is None or len(prev.w) != spec.n_var:
        return spec.w0, None, None
    w0 = _shift_groups(prev.w, spec.var_groups)
    lam_x = _shift_groups(prev.lam_x, spec.var_groups)
    lam_g = _shift_groups(prev.lam_g, spec.row_groups)
    return w0, lam_g, lam_x


def check_kkt(spec: NlpSpec, candidate) -> KktReport:
    """First-order optimality residuals of a primal-dual point.

    Multiplier signs follow CasADi: the Lagrangian gradient is
    ``grad f + J' lam_g + lam_x`` and a positive multiplier marks an
    active upper bound.
    """
    w = np.asarray(candidate.w, dtype=float).ravel()
    lam_g = np.asarray(candidate.lam_g, dtype=float).ravel()
    lam_x = np.asarray(candidate.lam_x, dtype=float).ravel()
    pb = spec.problem
    grad = np.asarray(pb.fn("grad_f")(w, spec.p_value)).ravel()
    g = np.asarray(pb.fn("g")(w, spec.p_value)).ravel()
    if spec.n_con:
        jac = np.asarray(ca.DM(pb.fn("jac_g")(w, spec.p_value)))
        lag = grad + jac.T @ lam_g + lam_x
    else:
        lag = grad + lam_x
    n_mult = lam_g.size + lam_x.size
    s_max = 100.0
    s_d = max(s_max, (np.abs(lam_g).sum() + np.abs(lam_x).sum()) / max(n_mult, 1)) / s_max
    raw = float(np.max(np.abs(lag))) if lag.size else 0.0

    viol = [0.0]
    if g.size:
        viol += [np.max(spec.lbg - g), np.max(g - spec.ubg)]
    viol += [np.max(spec.lbx - w), np.max(w - spec.ubx)]
    primal = float(max(viol))

    compl = max(_compl(lam_g, g, spec.lbg, spec.ubg), _compl(lam_x, w, spec.lbx, spec.ubx))
    return KktReport(raw / s_d, raw, primal, compl, s_d)


def _compl(lam, val, lo, hi):
    """Largest multiplier-times-gap product.

    The gap is the distance to the bound on its feasible side (zero when
    violated; violations count as primal infeasibility).  On an infinite
    bound the gap is unbounded, so the multiplier itself must vanish and
    its size is reported.
    """
    if lam.size == 0:
        return 0.0
    eq = lo == hi
    worst = 0.0
    for side, bound, gap in ((lam > 0, hi, hi - val), (lam < 0, lo, val - lo)):
        sel = side & ~eq
        if not np.any(sel):
            continue
        mag = np.abs(lam[sel])
        fin = np.isfinite(bound[sel])
        prod = np.where(fin, mag * np.maximum(np.where(fin, gap[sel], 0.0), 0.0), mag)
        worst = max(worst, float(np.max(prod)))
    return worst


SUCCESS = ("Solve_Succeeded", "Solved_To_Acceptable_Level")
POLISH_FACTOR = 1e-2
POLISH_MAX_ITER = 50
POLISH_PUSH = 1e-9  # start the polish from the accepted point itself


def _run(spec, cfg, warm, args, push=1e-6):
    solver = spec.problem.solver(cfg, warm, push)
    t0 = time.perf_counter()
    res = solver(**args)
    wall = time.perf_counter() - t0
    w = np.asarray(res["x"]).ravel()
    if not np.all(np.isfinite(w)):
        bad = int(np.flatnonzero(~np.isfinite(w))[0])
        step = None
        if bad < NX * spec.meta.get("N", 0):
            step = bad // NX + 1
        raise SolverNumericError(f"non-finite iterate (variable {bad})", step=step)
    point = KktPoint(w, np.asarray(res["lam_g"]).ravel(), np.asarray(res["lam_x"]).ravel())
    return res, solver.stats(), wall, point


def _trace_rows(stats, first=0):
    iters = stats.get("iterations", {})
    return [{"iter": first + i, "objective": float(obj), "inf_pr": float(pr), "inf_du": float(du)}
            for i, (obj, pr, du) in enumerate(zip(iters.get("obj", []), iters.get("inf_pr", []),
                                                  iters.get("inf_du", [])))]


def solve(spec: NlpSpec, cfg: SolverConfig | None = None, warm: HorizonSolution | None = None,
          trace_sink=None) -> HorizonSolution:
    """Solve with IPOPT and classify the result by an independent KKT check.

    IPOPT measures complementarity against its internal slacks, so a point
    it accepts can miss the check on the actual constraint gaps.  Such a
    point is polished once: re-solved from its own primal-dual values with
    a tighter tolerance, then re-checked at ``cfg.tol``.
    """
    cfg = cfg or SolverConfig()
    use_warm = cfg.warm_start and warm is not None and len(warm.w) == spec.n_var
    bounds = {"p": spec.p_value, "lbx": spec.lbx, "ubx": spec.ubx, "lbg": spec.lbg, "ubg": spec.ubg}
    if use_warm:
        w0, lam_g0, lam_x0 = warm_start_shift(warm, spec)
        args = dict(bounds, x0=w0, lam_g0=lam_g0, lam_x0=lam_x0)
    else:
        args = dict(bounds, x0=spec.w0)
    res, stats, wall, point = _run(spec, cfg, use_warm, args)
    kkt = check_kkt(spec, point)
    ret = stats.get("return_status", "")
    n_iter = int(stats.get("iter_count", 0))
    trace = _trace_rows(stats) if cfg.trace else []

    if ret in SUCCESS and not kkt.within(cfg.tol):
        tight = replace(cfg, tol=cfg.tol * POLISH_FACTOR, max_iter=POLISH_MAX_ITER)
        args = dict(bounds, x0=point.w, lam_g0=point.lam_g, lam_x0=point.lam_x)
        res2, stats2, wall2, point2 = _run(spec, tight, True, args, push=POLISH_PUSH)
        kkt2 = check_kkt(spec, point2)
        wall += wall2
        if cfg.trace:
            trace += _trace_rows(stats2, first=n_iter + 1)
        n_iter += int(stats2.get("iter_count", 0))
        if kkt2.within(cfg.tol) or not _worse(kkt2, kkt):
            res, stats, point, kkt = res2, stats2, point2, kkt2
            ret = stats2.get("return_status", "")
    if trace and trace_sink is not None:
        trace_sink(trace)

    sol = _extract(spec, point.w, point.lam_g, point.lam_x, float(res["f"]), kkt, wall, n_iter,
                   trace)
    sol.solver_message = ret
    if kkt.within(cfg.tol) and ret in SUCCESS:
        sol.status = CONVERGED
    elif ret in ("Infeasible_Problem_Detected", "Restoration_Failed"):
        sol.status = INFEASIBLE_RELAXED
    elif ret == "Maximum_Iterations_Exceeded" or not kkt.within(cfg.tol):
        sol.status = MAX_ITER
    else:
        sol.status = FAILED
    if sol.relaxed:
        log.debug("safety slacks active: max %.3g", float(sol.slacks.max()))
    return sol


def _worse(a: KktReport, b: KktReport):
    return max(a.stationarity, a.primal, a.complementarity) > max(b.stationarity, b.primal,
                                                                 b.complementarity)


def _extract(spec, w, lam_g, lam_x, obj, kkt, wall, iters, trace):
    M = spec.meta.get("M", 0)
    states = spec.unpack(w, "x")
    inputs = spec.unpack(w, "u")
    lam = [spec.unpack(w, f"lam{m}") for m in range(M)]
    mu = [spec.unpack(w, f"mu{m}") for m in range(M)]
    slacks = np.array([spec.unpack(w, f"s{m}").ravel() for m in range(M)]).reshape(M, spec.meta["N"])
    return HorizonSolution(states, inputs, lam, mu, slacks, obj, FAILED, kkt, wall, w, lam_g,
                           lam_x, iters, trace)


def objective_value(spec: NlpSpec, w):
    return float(spec.problem.fn("f")(w, spec.p_value))


def constraint_values(spec: NlpSpec, w):
    return np.asarray(spec.problem.fn("g")(w, spec.p_value)).ravel()


def rollout_guess(spec: NlpSpec, inputs):
    """Decision vector for the given input sequence: states from an Euler rollout,
    multipliers zero and slacks at ``d_safe``."""
    meta = spec.meta
    w = spec.w0.copy()
    x = meta["x0"].copy()
    traj = []
    for u in np.asarray(inputs, dtype=float).reshape(meta["N"], NU):
        x = euler_step(x, u, meta["T_s"], meta["params"], meta["model"], meta["road"], meta["variant"])
        traj.append(x)
    off = spec.var_groups["x"][0]
    w[off:off + NX * meta["N"]] = np.concatenate(traj)
    off = spec.var_groups["u"][0]
    w[off:off + NU * meta["N"]] = np.asarray(inputs, dtype=float).ravel()
    return w
