"""Closed-loop active source identification on synthetic data."""

import copy
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, planner, rom as rom_mod, si
from .flowfield import analytic_flow, load_flow, resample_flow
from .geometry import Box, Domain, build_mesh, decompose_convex
from .source import SourceParams

logger = logging.getLogger(__name__)

DESK_CONFIG = {
    "domain": {"lower": [0.0, 0.0], "upper": [1.0, 1.0], "obstacles": [], "characteristic_length": 1.0},
    "mesh": {"nx": 41, "ny": 41},
    "flow": {"kind": "recirculation", "kappa": 0.004, "floor": 0.0, "params": {"u_max": 0.01, "inlet": 0.0}},
    "truth_refinement": 2,
    "rom": {"cover_nx": 20, "cover_ny": 20, "eta": 0.97},
    "source": [{"beta": 1.0, "lower": [0.55, 0.25], "upper": [0.75, 0.45]}],
    "beta_max": 2.0,
    "mission": {"m_bar": 12, "m_max": 30, "sigma": 0.1, "epsilon": 1e-3, "tau": 1e-8, "alpha": 0.7},
    "si": {"max_iter": 200},
    "planner": {},
    "seed": 0,
}


def merge_config(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_config(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path):
    with open(path) as fh:
        return merge_config(DESK_CONFIG, json.load(fh))


# ----------------------------------------------------------------------
def interpolate(mesh, c, points):
    """Bilinear interpolation of a nodal field."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    G = mesh.grid(c)
    out = np.empty(len(pts))
    for k, x in enumerate(pts):
        mesh.check_point(x)
        i, j, s, t = mesh.locate(x)
        out[k] = ((1 - s) * (1 - t) * G[j, i] + s * (1 - t) * G[j, i + 1]
                  + s * t * G[j + 1, i + 1] + (1 - s) * t * G[j + 1, i])
    return out


def measure(mesh, c, points, sigma, rng=None):
    """Readings ``c(x) (1 + eps)`` with ``eps ~ N(0, sigma^2)``; returns ``(y, noise)``."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    clean = interpolate(mesh, c, points)
    eps = rng.normal(0.0, sigma, size=clean.shape) if sigma > 0 else np.zeros_like(clean)
    noise = clean * eps
    return clean + noise, noise


def snr_db(readings_clean, noise):
    """``20 log10(||c^m|| / ||noise||)`` over the measurement set."""
    num = np.linalg.norm(readings_clean)
    den = np.linalg.norm(noise)
    if den == 0:
        return math.inf
    return float(20.0 * np.log10(num / den))


# ----------------------------------------------------------------------
def _piecewise_cells(domain, towers_a, towers_b):
    xs = {domain.lower[0], domain.upper[0]}
    ys = {domain.lower[1], domain.upper[1]}
    for _, lo, hi in list(towers_a) + list(towers_b):
        xs |= {min(max(lo[0], domain.lower[0]), domain.upper[0]), min(max(hi[0], domain.lower[0]), domain.upper[0])}
        ys |= {min(max(lo[1], domain.lower[1]), domain.upper[1]), min(max(hi[1], domain.lower[1]), domain.upper[1])}
    for o in domain.obstacles:
        xs |= {o.lower[0], o.upper[0]}
        ys |= {o.lower[1], o.upper[1]}
    xs, ys = sorted(xs), sorted(ys)
    for x0, x1 in zip(xs[:-1], xs[1:]):
        for y0, y1 in zip(ys[:-1], ys[1:]):
            mid = (0.5 * (x0 + x1), 0.5 * (y0 + y1))
            if domain.contains(mid):
                yield mid, (x1 - x0) * (y1 - y0)


def _value(towers, x):
    return sum(b for b, lo, hi in towers if lo[0] <= x[0] <= hi[0] and lo[1] <= x[1] <= hi[1])


def error_metrics(domain, true_towers, est_towers, beta_max=None):
    """Exact ``e_un, e_fd`` (and ``e_int, e_loc`` for one tower on each side).

    Both sources are piecewise constant on the grid cut by every tower and
    obstacle edge, so the norms reduce to finite sums.

    ``e_un`` counts only the part of the true source left uncovered, the
    deficit ``max(true - est, 0)`` on the true support, so ``e_un < 1`` exactly
    when the supports overlap. ``e_un_abs`` is the two-sided ``|true - est|``
    version, which also charges over-estimation inside the support.
    """
    true_towers = [(float(b), tuple(lo), tuple(hi)) for b, lo, hi in true_towers]
    # towers with no area or no intensity do not change the source field
    est_towers = [(float(b), tuple(lo), tuple(hi)) for b, lo, hi in est_towers
                  if b > 0 and hi[0] > lo[0] and hi[1] > lo[1]]
    norm_true = un = un_abs = fd = 0.0
    for mid, area in _piecewise_cells(domain, true_towers, est_towers):
        st, se = _value(true_towers, mid), _value(est_towers, mid)
        norm_true += st * st * area
        if st > 0:
            un += max(st - se, 0.0) ** 2 * area
            un_abs += (st - se) ** 2 * area
        else:
            fd += se * se * area
    if norm_true <= 0:
        raise ValueError("true source is zero")
    out = {"e_un": math.sqrt(un / norm_true), "e_un_abs": math.sqrt(un_abs / norm_true),
           "e_fd": math.sqrt(fd / norm_true), "e_int": None, "e_loc": None}
    if len(true_towers) == 1 and len(est_towers) == 1:
        (bt, lt, ht), (be, le, he) = true_towers[0], est_towers[0]
        zt = 0.5 * (np.asarray(lt) + np.asarray(ht))
        ze = 0.5 * (np.asarray(le) + np.asarray(he))
        out["e_loc"] = float(np.linalg.norm(ze - zt) / domain.characteristic_length)
        out["e_int"] = float(abs(be - bt) / (beta_max if beta_max else bt))
    return out


# ----------------------------------------------------------------------
def initial_waypoints(domain, m_bar):
    """Cell-centred equispaced grid over the bounding box, obstacle points dropped."""
    lx = domain.upper[0] - domain.lower[0]
    ly = domain.upper[1] - domain.lower[1]
    kx = max(1, math.ceil(math.sqrt(m_bar * lx / ly)))
    ky = max(1, math.ceil(m_bar / kx))
    pts = []
    for j in range(ky):
        for i in range(kx):
            p = (domain.lower[0] + (i + 0.5) * lx / kx, domain.lower[1] + (j + 0.5) * ly / ky)
            if domain.contains(p):
                pts.append(p)
    return np.array(pts[:m_bar])


def build_flow(cfg, mesh, source_mesh=None, source_flow=None):
    f = cfg["flow"]
    floor = f.get("floor", 0.0)
    if "file" in f:
        if source_flow is not None:
            return resample_flow(source_flow, source_mesh, mesh)
        return load_flow(f["file"], mesh, floor)
    return analytic_flow(f["kind"], mesh, kappa=f.get("kappa", 1.0), floor=floor, **f.get("params", {}))


@dataclass
class Scenario:
    """Everything a mission needs that does not depend on the seed."""

    cfg: dict
    domain: Domain
    mesh: object
    flow: object
    rom: object
    truth_mesh: object
    truth_field: np.ndarray
    cover: object
    true_towers: list = field(default_factory=list)


def build_scenario(cfg, rom=None):
    domain = Domain.from_dict(cfg["domain"])
    mesh = build_mesh(domain, cfg["mesh"]["nx"], cfg["mesh"]["ny"])
    flow = build_flow(cfg, mesh)
    if rom is None:
        rc = cfg["rom"]
        if rc.get("path"):
            rom = rom_mod.ReducedModel.load(rc["path"])
        else:
            rom = rom_mod.build_reduced_model(mesh, flow, rc["cover_nx"], rc["cover_ny"], eta=rc["eta"])
    r = int(cfg.get("truth_refinement", 2))
    tmesh = build_mesh(domain, r * (mesh.nx - 1) + 1, r * (mesh.ny - 1) + 1)
    tflow = build_flow(cfg, tmesh, mesh, flow if "file" in cfg["flow"] else None)
    towers = [(t["beta"], tuple(t["lower"]), tuple(t["upper"])) for t in cfg["source"]]
    K = fem.assemble(tmesh, tflow)
    c_true = K.solve(fem.load_vector(tmesh, towers))
    return Scenario(cfg=cfg, domain=domain, mesh=mesh, flow=flow, rom=rom, truth_mesh=tmesh,
                    truth_field=c_true, cover=decompose_convex(domain), true_towers=towers)


@dataclass
class MissionReport:
    status: str
    converged: bool
    steps: list
    waypoints: list
    readings: list
    metrics: dict
    snr_db: float
    final_params: list
    message: str = ""
    wall_time: float = 0.0

    def to_dict(self):
        return {
            "status": self.status,
            "converged": self.converged,
            "message": self.message,
            "n_measurements": len(self.waypoints),
            "metrics": self.metrics,
            "snr_db": self.snr_db,
            "final_params": self.final_params,
            "waypoints": self.waypoints,
            "readings": self.readings,
            "steps": self.steps,
        }

    def success(self, un_max=1.0, loc_max=0.1):
        m = self.metrics or {}
        return (self.converged and m.get("e_un") is not None and m["e_un"] < un_max
                and m.get("e_loc") is not None and m["e_loc"] < loc_max)


def _travel(points):
    pts = np.asarray(points)
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()) if len(pts) > 1 else 0.0


def run_asi(cfg, seed=None, scenario=None):
    """Run one mission; ``seed`` overrides ``cfg['seed']``."""
    t_start = time.perf_counter()
    cfg = merge_config(DESK_CONFIG, cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    sc = scenario or build_scenario(cfg)
    mc = cfg["mission"]
    rng = np.random.default_rng(seed)
    rom = sc.rom
    beta_max = cfg.get("beta_max") or max(b for b, _, _ in sc.true_towers)

    wps = [tuple(p) for p in (mc.get("initial_waypoints") or initial_waypoints(sc.domain, mc["m_bar"]))]
    clean = list(interpolate(sc.truth_mesh, sc.truth_field, wps))
    y, noise = measure(sc.truth_mesh, sc.truth_field, wps, mc["sigma"], rng)
    readings, noises = list(y), list(noise)

    def report(status, converged, steps, params, message):
        metrics = {}
        if params is not None:
            metrics = error_metrics(sc.domain, sc.true_towers, list(params.towers()), beta_max)
        metrics["travel_length"] = _travel(wps)
        return MissionReport(
            status=status, converged=converged, steps=steps,
            waypoints=[[float(a), float(b)] for a, b in wps],
            readings=[float(v) for v in readings], metrics=metrics,
            snr_db=snr_db(np.array(clean), np.array(noises)),
            final_params=params.to_json() if params is not None else [],
            message=message, wall_time=time.perf_counter() - t_start)

    problem = si.SiProblem(rom, wps, readings, tau=mc["tau"])
    try:
        prev = si.sa_initialize(problem, alpha=mc["alpha"], cover=sc.cover,
                                beta_max=beta_max if mc.get("bound_beta", True) else np.inf)
    except si.NoSourceDetected as exc:
        return report("no_source", False, [], None, str(exc))

    steps = []
    converged = False
    message = "measurement budget exhausted"
    pcfg = cfg.get("planner", {})
    while True:
        sol = si.solve_si(problem, prev, max_iter=cfg["si"].get("max_iter", 200))
        p = sol.params
        dp = float(np.linalg.norm(p.p - prev.p)) if p.p.size == prev.p.size else math.inf
        step = {
            "m": len(wps),
            "p": [float(v) for v in p.p],
            "objective": float(sol.objective),
            "si_iterations": sol.iterations,
            "si_converged": sol.converged,
            "delta_p": dp,
        }
        step.update(error_metrics(sc.domain, sc.true_towers, list(p.towers()), beta_max))
        steps.append(step)
        if dp <= mc["epsilon"]:
            converged, message = True, "estimate converged"
            break
        if len(wps) >= mc["m_max"]:
            break
        state = planner.PlannerState.from_problem(rom, p, wps, **pcfg)
        plan = planner.next_best(state, cover=sc.cover)
        step.update({"next": [float(v) for v in plan.x], "lambda_min": plan.value,
                     "planner_converged": plan.converged, "planner_improved": plan.improved})
        x = tuple(plan.x)
        c_x = interpolate(sc.truth_mesh, sc.truth_field, [x])[0]
        yx, nx_ = measure(sc.truth_mesh, sc.truth_field, [x], mc["sigma"], rng)
        wps.append(x)
        clean.append(c_x)
        readings.append(float(yx[0]))
        noises.append(float(nx_[0]))
        problem = problem.with_measurements(wps, readings)
        prev = p
    return report("ok", converged, steps, p, message)


def write_outputs(report, out_dir, scenario=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"wall_time_s": report.wall_time}) + "\n")
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "objective", "delta_p", "si_iterations", "e_un", "e_fd", "e_int", "e_loc",
                    "next_x1", "next_x2", "lambda_min", "p"])
        for s in report.steps:
            nxt = s.get("next", ["", ""])
            w.writerow([s["m"], repr(s["objective"]), repr(s["delta_p"]), s["si_iterations"],
                        s["e_un"], s["e_fd"], s["e_int"], s["e_loc"], nxt[0], nxt[1],
                        s.get("lambda_min", ""), " ".join(repr(v) for v in s["p"])])
    if scenario is not None:
        fields = {"truth_nodes": scenario.truth_mesh.nodes, "truth_c": scenario.truth_field}
        if report.final_params:
            params = SourceParams.from_json(report.final_params)
            fields["nodes"] = scenario.mesh.nodes
            fields["estimate_c"] = scenario.rom.field(scenario.rom.reduced_solve(params))
        np.savez(out / "fields.npz", **fields)
