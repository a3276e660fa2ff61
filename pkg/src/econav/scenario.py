"""Scenario files: YAML documents with unit-suffixed keys.

Every section is checked against a fixed schema; unknown keys and missing
required keys raise :class:`ScenarioError` naming the offending field.
``dump_scenario`` writes every field, so load -> dump -> load is lossless.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from .dynamics import (AS_PRINTED, KWH, STANDARD, STATE_NAMES, Bounds, MotorPowerModel, RoadModel,
                       VehicleParams)
from .obstacles import ObstacleScript
from .ocp import OcpWeights, SolverConfig
from .uncertainty import required_sample_count

log = logging.getLogger(__name__)

REQUIRED = object()

STATE_KEYS = ("s_x_m", "e_y_m", "e_psi_rad", "v_x_m_s", "v_y_m_s", "r_rad_s", "gamma",
              "p_x_m", "p_y_m", "psi_rad")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ObstacleSpec:
    name: str
    script: ObstacleScript
    length: float = 4.5
    width: float = 1.8
    d_safe: float = 2.0


@dataclass(frozen=True)
class ControllerConfig:
    N: int
    N_s: int
    T_s: float
    weights: OcpWeights = OcpWeights()
    solver: SolverConfig = SolverConfig()
    epsilon: float = 0.1
    beta: float = 0.1
    safety_margin: float = 0.05  # added to d_safe inside the optimisation only
    prefill_history: bool = True
    kinematics: str = STANDARD
    cold_restart: bool = True  # re-solve from a cold start when the warm plan needs slack


@dataclass(frozen=True)
class Scenario:
    name: str
    x0: tuple
    dest: tuple
    controller: ControllerConfig
    max_time: float
    params: VehicleParams = VehicleParams()
    bounds: Bounds = Bounds()
    model: MotorPowerModel = MotorPowerModel()
    road: RoadModel = RoadModel()
    obstacles: tuple = ()
    seed: int = 0
    arrival_s_tol: float = 1.0
    arrival_ey_tol: float = 0.5
    out_dir: str = "out"
    dump_sets: bool = False

    def __post_init__(self):
        if len(self.x0) != len(STATE_NAMES) or len(self.dest) != len(STATE_NAMES):
            raise ScenarioError("initial state and destination need 10 components")
        if self.controller.T_s <= 0:
            raise ScenarioError("controller.Ts_s must be positive")
        if self.controller.N < 1:
            raise ScenarioError("controller.N must be at least 1")
        if self.controller.N_s < 1:
            raise ScenarioError("controller.N_s must be at least 1")
        if self.max_time <= 0:
            raise ScenarioError("simulation.max_time_s must be positive")
        if self.dest[0] == 0:
            raise ScenarioError("ev.destination.s_x_m must be nonzero")
        if not self.bounds.e_y_min <= self.dest[1] <= self.bounds.e_y_max:
            raise ScenarioError("destination lateral offset lies outside the road bounds")

    @property
    def T_s(self):
        return self.controller.T_s

    def with_overrides(self, *, energy_aware=None, horizon=None, seed=None, dump_sets=None,
                       trace=None, out_dir=None):
        ctl = self.controller
        if energy_aware is not None:
            ctl = replace(ctl, weights=replace(ctl.weights, energy_aware=bool(energy_aware)))
        if horizon is not None:
            if horizon < 1:
                raise ScenarioError("horizon must be at least 1")
            ctl = replace(ctl, N=int(horizon))
        if trace is not None:
            ctl = replace(ctl, solver=replace(ctl.solver, trace=bool(trace)))
        sc = replace(self, controller=ctl)
        if seed is not None:
            sc = replace(sc, seed=int(seed))
        if dump_sets is not None:
            sc = replace(sc, dump_sets=bool(dump_sets))
        if out_dir is not None:
            sc = replace(sc, out_dir=str(out_dir))
        return sc


def _fl(v):
    return float(v)


def _pair(v):
    v = tuple(float(x) for x in v)
    if len(v) != 2:
        raise ValueError("expected [low, high]")
    return v


def _floats(v):
    return tuple(float(x) for x in v)


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _int(v):
    if isinstance(v, bool) or int(v) != v:
        raise ValueError("expected an integer")
    return int(v)


def _take(doc, schema, where):
    """Validate ``doc`` against ``schema`` = {key: (converter, default)}."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    unknown = sorted(set(doc) - set(schema))
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
    out = {}
    for key, (conv, default) in schema.items():
        if key not in doc:
            if default is REQUIRED:
                raise ScenarioError(f"{where}.{key}: missing required field")
            out[key] = default
            continue
        try:
            out[key] = conv(doc[key])
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}.{key}: {exc}") from None
    return out


_VP = VehicleParams()
VEHICLE_SCHEMA = {
    "m_kg": (_fl, _VP.m), "Iz_kg_m2": (_fl, _VP.I_z), "lF_m": (_fl, _VP.l_F),
    "lR_m": (_fl, _VP.l_R), "CF_N_rad": (_fl, _VP.C_F), "CR_N_rad": (_fl, _VP.C_R),
    "Nd": (_fl, _VP.N_d), "rw_m": (_fl, _VP.r_w), "eta_i": (_fl, _VP.eta_i),
    "eta_b": (_fl, _VP.eta_b), "Eb_kWh": (_fl, _VP.E_b / KWH), "bounds": (lambda v: v, None),
}
_B = Bounds()
BOUND_KEYS = {"a_m_s2": "a", "d_m_s2": "d", "delta_rad": "delta", "v_x_m_s": "v_x",
              "e_y_m": "e_y", "gamma": "gamma"}
BOUNDS_SCHEMA = {k: (_pair, (getattr(_B, f + "_min"), getattr(_B, f + "_max")))
                 for k, f in BOUND_KEYS.items()}
_MM = MotorPowerModel()
MOTOR_SCHEMA = {
    "battery_coeffs": (_floats, _MM.c), "torque_coeffs_Nm": (_floats, _MM.xi),
    "loss_coeffs": (_floats, _MM.loss),
}
ROAD_SCHEMA = {"curvature_coeffs": (_floats, (0.0, 0.0, 0.0))}
EV_SCHEMA = {"initial_state": (lambda v: v, REQUIRED), "destination": (lambda v: v, REQUIRED)}
OBSTACLE_SCHEMA = {
    "name": (str, REQUIRED), "length_m": (_fl, 4.5), "width_m": (_fl, 1.8),
    "d_safe_m": (_fl, 2.0), "motion": (str, "static"), "frame": (str, "inertial"),
    "start_m": (_pair, REQUIRED), "heading_rad": (_fl, 0.0), "speed_m_s": (_fl, 0.0),
    "accel_profile": (lambda v: tuple(_pair(p) for p in v), ()),
    "waypoints_m": (lambda v: tuple(_pair(p) for p in v), ()),
    "segment_speeds_m_s": (_floats, ()), "jitter_m": (_fl, 0.0),
}
_W = OcpWeights()
WEIGHTS_SCHEMA = {
    "Q1": (_fl, _W.Q1), "Q2": (_fl, _W.Q2), "Q3": (_fl, _W.Q3), "R1": (_fl, _W.R1),
    "R2": (_fl, _W.R2), "R3": (_fl, _W.R3), "P1": (_fl, _W.P1), "P2": (_fl, _W.P2),
    "W_s": (_fl, _W.W_s), "e_y_max_m": (_fl, _W.e_y_max), "e_psi_max_rad": (_fl, _W.e_psi_max),
    "a_max_m_s2": (_fl, _W.a_max), "delta_max_rad": (_fl, _W.delta_max),
    "d_min_m_s2": (_fl, _W.d_min),
}
_S = SolverConfig()
SOLVER_SCHEMA = {
    "tol": (_fl, _S.tol), "max_iter": (_int, _S.max_iter), "warm_start": (_bool, _S.warm_start),
    "regularization": (_fl, _S.regularization), "trace": (_bool, _S.trace),
}
CONTROLLER_SCHEMA = {
    "N": (_int, REQUIRED), "N_s": (_int, REQUIRED), "Ts_s": (_fl, REQUIRED),
    "epsilon": (_fl, 0.1), "beta": (_fl, 0.1), "energy_aware": (_bool, True),
    "cost_form": (str, "normalized"), "kinematics": (str, STANDARD),
    "safety_margin_m": (_fl, 0.05), "prefill_history": (_bool, True),
    "cold_restart": (_bool, True),
    "weights": (lambda v: v, None), "solver": (lambda v: v, None),
}
SIMULATION_SCHEMA = {
    "max_time_s": (_fl, REQUIRED), "seed": (_int, 0), "arrival_s_tol_m": (_fl, 1.0),
    "arrival_e_y_tol_m": (_fl, 0.5),
}
OUTPUT_SCHEMA = {"dir": (str, "out"), "dump_sets": (_bool, False)}
TOP_SCHEMA = {
    "name": (str, "scenario"), "vehicle": (lambda v: v, None), "motor": (lambda v: v, None),
    "road": (lambda v: v, None), "ev": (lambda v: v, REQUIRED), "obstacles": (lambda v: v, ()),
    "controller": (lambda v: v, REQUIRED), "simulation": (lambda v: v, REQUIRED),
    "output": (lambda v: v, None),
}


def _state(doc, where):
    vals = _take(doc, {k: (_fl, 0.0) for k in STATE_KEYS}, where)
    return tuple(vals[k] for k in STATE_KEYS)


def scenario_from_dict(doc) -> Scenario:
    top = _take(doc, TOP_SCHEMA, "scenario")
    try:
        veh = _take(top["vehicle"], VEHICLE_SCHEMA, "vehicle")
        params = VehicleParams(m=veh["m_kg"], I_z=veh["Iz_kg_m2"], l_F=veh["lF_m"], l_R=veh["lR_m"],
                               C_F=veh["CF_N_rad"], C_R=veh["CR_N_rad"], N_d=veh["Nd"],
                               r_w=veh["rw_m"], eta_i=veh["eta_i"], eta_b=veh["eta_b"],
                               E_b=veh["Eb_kWh"] * KWH)
        bd = _take(veh["bounds"], BOUNDS_SCHEMA, "vehicle.bounds")
        kw = {}
        for key, f in BOUND_KEYS.items():
            kw[f + "_min"], kw[f + "_max"] = bd[key]
        bounds = Bounds(**kw)
        mot = _take(top["motor"], MOTOR_SCHEMA, "motor")
        model = MotorPowerModel(c=mot["battery_coeffs"], xi=mot["torque_coeffs_Nm"],
                                loss=mot["loss_coeffs"])
        rd = _take(top["road"], ROAD_SCHEMA, "road")
        if len(rd["curvature_coeffs"]) != 3:
            raise ScenarioError("road.curvature_coeffs: expected [k1, k2, k3]")
        road = RoadModel(*rd["curvature_coeffs"])
        ev = _take(top["ev"], EV_SCHEMA, "ev")
        x0 = _state(ev["initial_state"], "ev.initial_state")
        dest = _state(ev["destination"], "ev.destination")

        obstacles = []
        if not isinstance(top["obstacles"], (list, tuple)):
            raise ScenarioError("obstacles: expected a list")
        for i, od in enumerate(top["obstacles"]):
            o = _take(od, OBSTACLE_SCHEMA, f"obstacles[{i}]")
            script = ObstacleScript(kind=o["motion"], start=o["start_m"], heading=o["heading_rad"],
                                    speed=o["speed_m_s"], accel_profile=o["accel_profile"],
                                    waypoints=o["waypoints_m"],
                                    segment_speeds=o["segment_speeds_m_s"], frame=o["frame"],
                                    jitter=o["jitter_m"])
            obstacles.append(ObstacleSpec(o["name"], script, o["length_m"], o["width_m"],
                                          o["d_safe_m"]))

        c = _take(top["controller"], CONTROLLER_SCHEMA, "controller")
        w = _take(c["weights"], WEIGHTS_SCHEMA, "controller.weights")
        weights = OcpWeights(Q1=w["Q1"], Q2=w["Q2"], Q3=w["Q3"], R1=w["R1"], R2=w["R2"], R3=w["R3"],
                             P1=w["P1"], P2=w["P2"], W_s=w["W_s"], e_y_max=w["e_y_max_m"],
                             e_psi_max=w["e_psi_max_rad"], a_max=w["a_max_m_s2"],
                             delta_max=w["delta_max_rad"], d_min=w["d_min_m_s2"],
                             energy_aware=c["energy_aware"], cost_form=c["cost_form"])
        s = _take(c["solver"], SOLVER_SCHEMA, "controller.solver")
        solver = SolverConfig(tol=s["tol"], max_iter=s["max_iter"], warm_start=s["warm_start"],
                              regularization=s["regularization"], trace=s["trace"])
        if c["kinematics"] not in (STANDARD, AS_PRINTED):
            raise ScenarioError(f"controller.kinematics: unknown variant {c['kinematics']!r}")
        ctl = ControllerConfig(N=c["N"], N_s=c["N_s"], T_s=c["Ts_s"], weights=weights, solver=solver,
                               epsilon=c["epsilon"], beta=c["beta"],
                               safety_margin=c["safety_margin_m"],
                               prefill_history=c["prefill_history"], kinematics=c["kinematics"],
                               cold_restart=c["cold_restart"])
        need = required_sample_count(ctl.epsilon, ctl.beta, 2)
        if ctl.N_s < need:
            log.warning("N_s=%d is below the %d samples required for epsilon=%g, beta=%g",
                        ctl.N_s, need, ctl.epsilon, ctl.beta)
        sim = _take(top["simulation"], SIMULATION_SCHEMA, "simulation")
        out = _take(top["output"], OUTPUT_SCHEMA, "output")
        return Scenario(name=top["name"], x0=x0, dest=dest, controller=ctl,
                        max_time=sim["max_time_s"], params=params, bounds=bounds, model=model,
                        road=road, obstacles=tuple(obstacles), seed=sim["seed"],
                        arrival_s_tol=sim["arrival_s_tol_m"], arrival_ey_tol=sim["arrival_e_y_tol_m"],
                        out_dir=out["dir"], dump_sets=out["dump_sets"])
    except ScenarioError:
        raise
    except ValueError as exc:  # invariant violations in the model types
        raise ScenarioError(str(exc)) from None


def scenario_to_dict(sc: Scenario) -> dict:
    p, b, w, c, s = sc.params, sc.bounds, sc.controller.weights, sc.controller, sc.controller.solver
    return {
        "name": sc.name,
        "vehicle": {
            "m_kg": p.m, "Iz_kg_m2": p.I_z, "lF_m": p.l_F, "lR_m": p.l_R, "CF_N_rad": p.C_F,
            "CR_N_rad": p.C_R, "Nd": p.N_d, "rw_m": p.r_w, "eta_i": p.eta_i, "eta_b": p.eta_b,
            "Eb_kWh": p.E_b / KWH,
            "bounds": {k: [getattr(b, f + "_min"), getattr(b, f + "_max")]
                       for k, f in BOUND_KEYS.items()},
        },
        "motor": {"battery_coeffs": list(sc.model.c), "torque_coeffs_Nm": list(sc.model.xi),
                  "loss_coeffs": list(sc.model.loss)},
        "road": {"curvature_coeffs": [sc.road.k1, sc.road.k2, sc.road.k3]},
        "ev": {"initial_state": dict(zip(STATE_KEYS, map(float, sc.x0))),
               "destination": dict(zip(STATE_KEYS, map(float, sc.dest)))},
        "obstacles": [
            {"name": o.name, "length_m": o.length, "width_m": o.width, "d_safe_m": o.d_safe,
             "motion": o.script.kind, "frame": o.script.frame, "start_m": list(o.script.start),
             "heading_rad": o.script.heading, "speed_m_s": o.script.speed,
             "accel_profile": [list(x) for x in o.script.accel_profile],
             "waypoints_m": [list(x) for x in o.script.waypoints],
             "segment_speeds_m_s": list(o.script.segment_speeds), "jitter_m": o.script.jitter}
            for o in sc.obstacles
        ],
        "controller": {
            "N": c.N, "N_s": c.N_s, "Ts_s": c.T_s, "epsilon": c.epsilon, "beta": c.beta,
            "energy_aware": w.energy_aware, "cost_form": w.cost_form, "kinematics": c.kinematics,
            "safety_margin_m": c.safety_margin, "prefill_history": c.prefill_history,
            "cold_restart": c.cold_restart,
            "weights": {"Q1": w.Q1, "Q2": w.Q2, "Q3": w.Q3, "R1": w.R1, "R2": w.R2, "R3": w.R3,
                        "P1": w.P1, "P2": w.P2, "W_s": w.W_s, "e_y_max_m": w.e_y_max,
                        "e_psi_max_rad": w.e_psi_max, "a_max_m_s2": w.a_max,
                        "delta_max_rad": w.delta_max, "d_min_m_s2": w.d_min},
            "solver": {"tol": s.tol, "max_iter": s.max_iter, "warm_start": s.warm_start,
                       "regularization": s.regularization, "trace": s.trace},
        },
        "simulation": {"max_time_s": sc.max_time, "seed": sc.seed,
                       "arrival_s_tol_m": sc.arrival_s_tol, "arrival_e_y_tol_m": sc.arrival_ey_tol},
        "output": {"dir": sc.out_dir, "dump_sets": sc.dump_sets},
    }


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML ({exc})") from None
    return scenario_from_dict(doc)


def dump_scenario(sc: Scenario, path=None) -> str:
    text = yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def shipped_scenario_path(name):
    """Path of a scenario bundled with the package (``overtaking`` or ``multi_obstacle``)."""
    p = Path(__file__).with_name("scenarios") / f"{name}.yaml"
    if not p.exists():
        raise ScenarioError(f"no shipped scenario named {name!r}")
    return p
