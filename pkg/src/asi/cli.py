"""Command line entry point: ``asi run`` plus one subcommand per pipeline stage."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import fem, mission, planner, rom as rom_mod, si
from .geometry import Domain, build_mesh, decompose_convex
from .source import load_params, save_params

logger = logging.getLogger("asi")


def _config(path):
    return mission.load_config(path) if path else mission.merge_config(mission.DESK_CONFIG, {})


def _mesh_and_flow(cfg):
    domain = Domain.from_dict(cfg["domain"])
    mesh = build_mesh(domain, cfg["mesh"]["nx"], cfg["mesh"]["ny"])
    return domain, mesh, mission.build_flow(cfg, mesh)


def _load_measurements(path):
    """CSV with columns x1, x2, reading (header optional) or JSON ``{waypoints, readings}``."""
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        y = data.get("readings")
        return np.asarray(data["waypoints"], dtype=float), None if y is None else np.asarray(y, dtype=float)
    arr = np.atleast_2d(np.genfromtxt(path, delimiter=","))
    if np.isnan(arr[0]).any():
        arr = arr[1:]
    return arr[:, :2], arr[:, 2] if arr.shape[1] > 2 else None


def cmd_run(args):
    cfg = _config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    sc = mission.build_scenario(cfg)
    report = mission.run_asi(cfg, scenario=sc)
    mission.write_outputs(report, args.out, sc)
    m = report.metrics
    logger.info("%s after %d measurements: e_un=%s e_loc=%s", report.message, len(report.waypoints),
                m.get("e_un"), m.get("e_loc"))
    print(json.dumps({"converged": report.converged, "success": bool(report.success()),
                      "metrics": m, "out": str(args.out)}, sort_keys=True))
    return 0


def cmd_snapshots(args):
    cfg = _config(args.config)
    _, mesh, flow = _mesh_and_flow(cfg)
    rc = cfg["rom"]
    snaps = fem.generate_snapshots(mesh, flow, rc["cover_nx"], rc["cover_ny"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, fields=rom_mod.snapshot_matrix(snaps),
             lower=np.array([s.lower for s in snaps]), upper=np.array([s.upper for s in snaps]))
    logger.info("wrote %d snapshots to %s", len(snaps), out)
    return 0


def cmd_pod(args):
    cfg = _config(args.config)
    _, mesh, flow = _mesh_and_flow(cfg)
    rc = cfg["rom"]
    eta = args.eta if args.eta is not None else rc["eta"]
    snaps = None
    if args.snapshots:
        data = np.load(args.snapshots)
        snaps = [fem.Snapshot(lower=tuple(l), upper=tuple(u), c=c)
                 for l, u, c in zip(data["lower"], data["upper"], data["fields"])]
    model = rom_mod.build_reduced_model(mesh, flow, rc["cover_nx"], rc["cover_ny"], eta=eta, snapshots=snaps)
    model.save(args.out)
    logger.info("reduced model with N=%d written to %s", model.N, args.out)
    return 0


def _rom(cfg, path):
    if path:
        return rom_mod.ReducedModel.load(path)
    _, mesh, flow = _mesh_and_flow(cfg)
    rc = cfg["rom"]
    return rom_mod.build_reduced_model(mesh, flow, rc["cover_nx"], rc["cover_ny"], eta=rc["eta"])


def cmd_solve_si(args):
    cfg = _config(args.config)
    model = _rom(cfg, args.rom)
    wps, y = _load_measurements(args.measurements)
    if y is None:
        raise ValueError("measurement file has no readings column")
    mc = cfg["mission"]
    problem = si.SiProblem(model, wps, y, tau=mc["tau"])
    domain = Domain.from_dict(cfg["domain"])
    cover = decompose_convex(domain)
    if args.init:
        p0 = load_params(args.init, default_bounds=si.full_box(domain))
    else:
        beta_max = cfg.get("beta_max") if mc.get("bound_beta", True) else None
        p0 = si.sa_initialize(problem, alpha=mc["alpha"], cover=cover,
                              beta_max=beta_max if beta_max else np.inf)
    sol = si.solve_si(problem, p0, max_iter=cfg["si"].get("max_iter", 200))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(sol.params, out / "params.json")
    sol.write_trace(out / "trace.csv")
    np.savez(out / "fields.npz", nodes=model.mesh.nodes, c=model.field(model.reduced_solve(sol.params)))
    print(json.dumps({"objective": sol.objective, "iterations": sol.iterations,
                      "converged": sol.converged, "message": sol.message}, sort_keys=True))
    return 0 if sol.converged else 1


def cmd_plan_step(args):
    cfg = _config(args.config)
    model = _rom(cfg, args.rom)
    wps, _ = _load_measurements(args.measurements)
    domain = Domain.from_dict(cfg["domain"])
    params = load_params(args.params, default_bounds=si.full_box(domain))
    state = planner.PlannerState.from_problem(model, params, wps, **cfg.get("planner", {}))
    res = planner.next_best(state, cover=decompose_convex(domain))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.write_trace(out / "trace.csv")
    result = {"next": [float(v) for v in res.x], "lambda_min": res.value, "converged": res.converged,
              "improved": res.improved, "iterations": res.iterations, "message": res.message}
    (out / "plan.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result, sort_keys=True))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="asi", description="Active source identification in advection-diffusion flows.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="closed-loop mission")
    p.add_argument("--config", help="mission JSON; missing keys fall back to the desk defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("snapshots", help="unit tower forward solves")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output .npz")
    p.set_defaults(func=cmd_snapshots)

    p = sub.add_parser("pod", help="build and save a reduced model")
    p.add_argument("--config")
    p.add_argument("--snapshots", help="npz written by 'asi snapshots'")
    p.add_argument("--eta", type=float)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pod)

    p = sub.add_parser("solve-si", help="source identification from measurements")
    p.add_argument("--config")
    p.add_argument("--rom", help="directory written by 'asi pod'")
    p.add_argument("--measurements", required=True, help="CSV x1,x2,reading or JSON")
    p.add_argument("--init", help="initial params JSON; default is sensitivity initialization")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve_si)

    p = sub.add_parser("plan-step", help="next best measurement location")
    p.add_argument("--config")
    p.add_argument("--rom")
    p.add_argument("--params", required=True, help="current estimate JSON")
    p.add_argument("--measurements", required=True, help="visited waypoints (readings ignored)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan_step)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, si.NoSourceDetected) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
