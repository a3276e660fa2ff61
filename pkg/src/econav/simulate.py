"""Closed-loop receding-horizon simulation, metrics and scheme comparison."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ocp
from .avoidance import DualVariables, RobustConstraintBlock
from .dynamics import NU, NX, ModelError, NumericError, battery_power, euler_step, lateral_dissipation
from .dynamics import motor_operating_point
from .geometry import distance_point_to_polygon
from .obstacles import ObstacleTrack, forecast_occupancy, record_position, rectangle_vertices
from .scenario import Scenario

log = logging.getLogger(__name__)

PASS = "PASS"
VIOLATION = "VIOLATION"
ABORT = "ABORT"
TIMEOUT = "TIMEOUT"
ERROR = "ERROR"

RESTART_SLACK = 1e-3  # summed slack (m) above which a cold start is also tried


@dataclass
class StepRecord:
    t: float
    state: np.ndarray
    u: np.ndarray
    obstacle_positions: list
    obstacle_headings: list
    d_eo: list
    P_b: float
    P_lat: float
    status: str
    slack_sum: float
    solve_ms: float


@dataclass
class Certificate:
    """One robust block of a solved horizon, kept for offline verification."""

    step: int
    k: int
    obstacle: int
    p: np.ndarray
    duals: DualVariables
    block: RobustConstraintBlock


@dataclass
class SimLog:
    scenario: Scenario
    energy_aware: bool
    records: list = field(default_factory=list)
    final_state: np.ndarray = None
    final_d_eo: list = field(default_factory=list)
    final_t: float = 0.0
    arrival_t: float | None = None
    arrived: bool = False
    aborted: bool = False
    diagnostic: str = ""
    coverage_excess: float = -np.inf  # max G w - h over every forecast's training samples
    certificates: list = field(default_factory=list)
    set_dump: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def times(self):
        return np.array([r.t for r in self.records])


@dataclass
class Metrics:
    energy_wh: float
    energy_sum_wh: float  # the same quantity from the summed battery power
    double_entry_error: float
    travel_time_s: float | None
    arrived: bool
    min_d_eo_m: float
    lateral_dissipation_wh: float
    regen_wh: float
    violations: int
    first_violation_s: float | None
    steps: int
    relaxed_steps: int
    status: str

    def to_dict(self):
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                for k, v in asdict(self).items()}


def ground_truth_distance(ev_position, obstacle_polygon):
    """Distance from the EV reference point to an obstacle's true polygon."""
    return distance_point_to_polygon(ev_position, obstacle_polygon)


def arrived(x, sc: Scenario):
    return abs(x[0] - sc.dest[0]) < sc.arrival_s_tol and abs(x[1] - sc.dest[1]) < sc.arrival_ey_tol


def arrival_fraction(x, x_next, sc: Scenario):
    """Earliest fraction of a step at which the straight Euler segment from
    ``x`` to ``x_next`` enters the arrival window, or None.

    The window test on samples alone can be jumped over at speed.
    """
    lo, hi = 0.0, 1.0
    for i, tol in ((0, sc.arrival_s_tol), (1, sc.arrival_ey_tol)):
        a, b = x[i] - sc.dest[i], x_next[i] - x[i]
        # |a + b f| < tol
        if b == 0.0:
            if abs(a) >= tol:
                return None
            continue
        f1, f2 = sorted(((-tol - a) / b, (tol - a) / b))
        lo, hi = max(lo, f1), min(hi, f2)
    if lo >= hi:
        return None
    return lo


def _true_polygons(sc, t, step):
    pos, head, polys = [], [], []
    for i, ob in enumerate(sc.obstacles):
        p = ob.script.position(t, step, sc.seed, i, sc.road)
        h = ob.script.heading_at(t, sc.road)
        pos.append(p)
        head.append(h)
        polys.append(rectangle_vertices(p, h, ob.length, ob.width))
    return pos, head, polys


def needs_restart(sol):
    """A warm-started plan that failed or leans on slack may be a local
    minimum inherited from the previous plan."""
    return not sol.usable or sol.slack_sum > RESTART_SLACK


def better_solution(first, second):
    """Usable beats unusable; between usable plans the lower objective wins."""
    if second.usable and (not first.usable or second.objective < first.objective):
        return second
    return first


def run_receding_horizon(sc: Scenario, energy_aware=None, keep_certificates=False,
                         trace_sink=None) -> SimLog:
    """Close the loop: sense, forecast, solve, apply the first input, repeat.

    Stops on arrival, at ``sc.max_time`` or on a solver numeric failure
    (``log.aborted`` with a diagnostic).
    """
    if energy_aware is not None:
        sc = sc.with_overrides(energy_aware=energy_aware)
    ctl = sc.controller
    N, T_s = ctl.N, ctl.T_s
    weights = ctl.weights
    out = SimLog(sc, weights.energy_aware)
    x = np.asarray(sc.x0, dtype=float)
    dest = np.asarray(sc.dest, dtype=float)
    ulo, uhi = sc.bounds.input_box()
    d_plan = [ob.d_safe + ctl.safety_margin for ob in sc.obstacles]

    cap = ctl.N_s + N
    tracks = [ObstacleTrack(cap, T_s, ob.script.initial_heading(sc.road), ob.length, ob.width)
              for ob in sc.obstacles]
    if ctl.prefill_history:
        for j in range(-(cap - 1), 0):
            for i, ob in enumerate(sc.obstacles):
                record_position(tracks[i], ob.script.position(j * T_s, j, sc.seed, i, sc.road),
                                j * T_s)

    prev = None
    n_steps = int(round(sc.max_time / T_s))
    for step in range(n_steps):
        t = step * T_s
        pos, head, polys = _true_polygons(sc, t, step)
        for i in range(len(tracks)):
            record_position(tracks[i], pos[i], t)
            tracks[i].heading = head[i]
        d_eo = [ground_truth_distance(x[7:9], poly) for poly in polys]
        if arrived(x, sc):
            out.arrived = True
            break

        forecasts = [forecast_occupancy(tr, N, ctl.N_s) for tr in tracks]
        for fc in forecasts:
            out.coverage_excess = max(out.coverage_excess, fc.coverage_excess)
        if sc.dump_sets:
            out.set_dump.append({"t": t, "sets": [[fc.occupancy_polygon(k).tolist()
                                                   for k in range(1, N + 1)] for fc in forecasts]})
        spec = ocp.build_ocp(x, forecasts, weights, sc.bounds, sc.params, sc.model, sc.road, N,
                             T_s=T_s, dest=dest, d_safe=d_plan, variant=ctl.kinematics,
                             solver_cfg=ctl.solver)
        sink = None
        if ctl.solver.trace:
            def sink(rows, _step=step):
                out.trace.extend({"step": _step, **r} for r in rows)
                if trace_sink is not None:
                    trace_sink(_step, rows)
        t0 = time.perf_counter()
        try:
            sol = ocp.solve(spec, ctl.solver, warm=prev, trace_sink=sink)
            if ctl.cold_restart and prev is not None and needs_restart(sol):
                sol = better_solution(sol, ocp.solve(spec, ctl.solver, warm=None, trace_sink=sink))
        except (ocp.SolverNumericError, NumericError, ModelError) as exc:
            out.aborted = True
            out.diagnostic = f"t={t:.2f}s: {exc}"
            log.error("solver aborted at t=%.2f s: %s", t, exc)
            break
        solve_ms = (time.perf_counter() - t0) * 1e3

        if sol.usable:
            u = sol.inputs[0]
            prev = sol
        elif prev is not None:  # fall back on the previous plan's next input
            u = prev.inputs[min(1, N - 1)]
            prev = None
        else:
            u = np.zeros(NU)
        u = np.clip(u, ulo, uhi)
        if sol.status != ocp.CONVERGED:
            log.info("t=%.2f s: solver status %s", t, sol.status)

        if keep_certificates:
            for m, fc in enumerate(forecasts):
                for k in range(N):
                    blk = RobustConstraintBlock(fc.base.A, fc.base.b, fc.sets[k].G, fc.sets[k].h,
                                                d_plan[m], float(sol.slacks[m, k]))
                    out.certificates.append(Certificate(step, k + 1, m, sol.states[k, 7:9].copy(),
                                                        DualVariables(sol.lam[m][k], sol.mu[m][k]),
                                                        blk))

        tau, omega = motor_operating_point(x, u[0], sc.params)
        P_b = float(battery_power(tau, omega, sc.model))
        P_lat = float(lateral_dissipation(x, u, sc.params))
        out.records.append(StepRecord(t, x.copy(), u.copy(), [p.copy() for p in pos], head, d_eo,
                                      P_b, P_lat, sol.status, sol.slack_sum, solve_ms))
        x_next = euler_step(x, u, T_s, sc.params, sc.model, sc.road, ctl.kinematics)
        frac = arrival_fraction(x, x_next, sc)
        x = x_next
        if frac is not None:
            out.arrived = True
            out.arrival_t = float(t + frac * T_s)
            step += 1
            break
    else:
        step = n_steps
    t = step * T_s
    out.final_t = t
    out.final_state = x
    if not out.aborted:
        if out.arrived and out.arrival_t is None:  # already inside the window at a sample
            out.arrival_t = t
        pos, head, polys = _true_polygons(sc, t, step)
        out.final_d_eo = [ground_truth_distance(x[7:9], p) for p in polys]
    return out


def compute_metrics(slog: SimLog) -> Metrics:
    sc = slog.scenario
    if not slog.records and slog.final_state is None:
        raise ValueError("empty simulation log")
    T_s = sc.T_s
    E_b, eta_b = sc.params.E_b, sc.params.eta_b
    gamma0 = float(sc.x0[6])
    gamma_end = float(slog.final_state[6])
    energy_j = (gamma0 - gamma_end) * E_b
    p_b = np.array([r.P_b for r in slog.records])
    summed_j = eta_b * T_s * float(p_b.sum())
    scale = max(1.0, eta_b * T_s * float(np.abs(p_b).sum()))
    de_err = abs(energy_j - summed_j) / scale
    regen_j = eta_b * T_s * float(np.clip(-p_b, 0.0, None).sum())
    lat_j = T_s * sum(r.P_lat for r in slog.records)

    d_safe = [ob.d_safe for ob in sc.obstacles]
    viol, first = 0, None
    min_d = np.inf
    rows = [(r.t, r.d_eo) for r in slog.records]
    if slog.final_d_eo:
        rows.append((slog.final_t, slog.final_d_eo))
    for t, ds in rows:
        bad = any(d < s for d, s in zip(ds, d_safe))
        if ds:
            min_d = min(min_d, min(ds))
        if bad:
            viol += 1
            if first is None:
                first = t
    relaxed = sum(1 for r in slog.records if r.slack_sum > ocp.SLACK_REPORT)
    if slog.aborted:
        status = ABORT
    elif viol:
        status = VIOLATION
    elif not slog.arrived:
        status = TIMEOUT
    else:
        status = PASS
    return Metrics(energy_wh=energy_j / 3600.0, energy_sum_wh=summed_j / 3600.0,
                   double_entry_error=de_err,
                   travel_time_s=slog.arrival_t if slog.arrived else None, arrived=slog.arrived,
                   min_d_eo_m=float(min_d), lateral_dissipation_wh=lat_j / 3600.0,
                   regen_wh=regen_j / 3600.0, violations=viol, first_violation_s=first,
                   steps=len(slog.records), relaxed_steps=relaxed, status=status)


@dataclass
class Comparison:
    aware: Metrics
    unaware: Metrics
    verdict: str
    diagnostic: str = ""

    def to_dict(self):
        a, u = self.aware, self.unaware
        ratio_e = a.energy_wh / u.energy_wh if u.energy_wh else None
        ratio_t = (a.travel_time_s / u.travel_time_s
                   if a.travel_time_s and u.travel_time_s else None)
        return {"verdict": self.verdict, "diagnostic": self.diagnostic,
                "energy_wh": {"aware": a.energy_wh, "unaware": u.energy_wh},
                "travel_time_s": {"aware": a.travel_time_s, "unaware": u.travel_time_s},
                "energy_ratio": ratio_e, "time_ratio": ratio_t,
                "aware": a.to_dict(), "unaware": u.to_dict()}


def compare_schemes(sc: Scenario, keep_certificates=False):
    """Run the energy-aware and energy-unaware controllers on the same scenario.

    Returns ``(Comparison, aware_log, unaware_log)``.
    """
    logs = {flag: run_receding_horizon(sc, energy_aware=flag, keep_certificates=keep_certificates)
            for flag in (True, False)}
    ma, mu = compute_metrics(logs[True]), compute_metrics(logs[False])
    if logs[True].aborted or logs[False].aborted:
        diag = "; ".join(f"{name}: {lg.diagnostic}" for name, lg in
                         (("aware", logs[True]), ("unaware", logs[False])) if lg.aborted)
        verdict = ERROR
    else:
        diag = ""
        ok = (ma.violations == 0 and mu.violations == 0 and ma.arrived and mu.arrived
              and ma.energy_wh < mu.energy_wh)
        verdict = PASS if ok else "FAIL"
    return Comparison(ma, mu, verdict, diag), logs[True], logs[False]


CSV_BASE = ("t", "s_x", "e_y", "e_psi", "v_x", "v_y", "r", "gamma", "p_x", "p_y", "psi",
            "a", "delta", "d", "P_b", "P_lat")


def csv_header(n_obstacles):
    return (list(CSV_BASE) + [f"d_EO_{i + 1}" for i in range(n_obstacles)]
            + ["slack_sum", "solver_status", "solve_ms"])


def csv_rows(slog: SimLog):
    for r in slog.records:
        vals = [r.t, *r.state, *r.u, r.P_b, r.P_lat, *r.d_eo, r.slack_sum]
        yield [repr(float(v)) for v in vals] + [r.status, f"{r.solve_ms:.3f}"]


def replay_states(slog: SimLog):
    """Re-integrate the logged inputs from the initial state (replay oracle)."""
    sc = slog.scenario
    x = np.asarray(sc.x0, dtype=float)
    out = []
    for r in slog.records:
        out.append(x.copy())
        x = euler_step(x, r.u, sc.T_s, sc.params, sc.model, sc.road, sc.controller.kinematics)
    return np.array(out).reshape(-1, NX), x


__all__ = ["SimLog", "Metrics", "Comparison", "run_receding_horizon", "compute_metrics",
           "compare_schemes", "ground_truth_distance", "csv_header", "csv_rows", "replay_states",
]
