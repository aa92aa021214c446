"""Velocity and diffusivity fields on a mesh."""

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FlowField:
    """Nodal velocity ``(n_nodes, 2)`` and diffusivity ``(n_nodes,)``.

    ``floor`` is the artificial-diffusion lower bound already applied to
    ``diffusivity``.
    """

    velocity: np.ndarray
    diffusivity: np.ndarray
    floor: float = 0.0

    @property
    def mean_diffusivity(self):
        return float(np.mean(self.diffusivity))


def total_diffusivity(kappa0, turb_viscosity, density, schmidt, floor=0.0):
    """Laminar plus turbulent diffusivity, bounded below by ``floor``."""
    if density <= 0 or schmidt <= 0:
        raise ValueError("density and Schmidt number must be positive")
    mu = np.asarray(turb_viscosity, dtype=float)
    if np.any(mu < 0):
        raise ValueError("turbulent viscosity must be nonnegative")
    return np.maximum(floor, kappa0 + mu / (density * schmidt))


def peclet(u_mag, l_char, kappa_mean):
    if kappa_mean <= 0:
        raise ValueError("mean diffusivity must be positive")
    if u_mag < 0 or l_char <= 0:
        raise ValueError("velocity magnitude must be >= 0 and length > 0")
    return u_mag * l_char / kappa_mean


def _finalize(mesh, velocity, kappa, floor):
    velocity = np.asarray(velocity, dtype=float)
    kappa = np.maximum(np.asarray(kappa, dtype=float), floor)
    if velocity.shape != (mesh.n_nodes, 2) or kappa.shape != (mesh.n_nodes,):
        raise ValueError(
            f"flow arrays do not match the mesh: velocity {velocity.shape}, "
            f"diffusivity {kappa.shape}, nodes {mesh.n_nodes}"
        )
    if not (np.all(np.isfinite(velocity)) and np.all(np.isfinite(kappa))):
        raise ValueError("flow field contains NaN or infinite entries")
    if np.any(kappa[mesh.active_mask] <= 0):
        raise ValueError("diffusivity must be positive at every active node; raise the floor")
    div = max_divergence(mesh, velocity)
    vmax = np.abs(velocity).max()
    if vmax > 0 and div * min(mesh.spacing) > 1e-3 * vmax:
        logger.warning("velocity field is not discretely solenoidal: max |div u| = %.3e", div)
    return FlowField(velocity=velocity, diffusivity=kappa, floor=float(floor))


def max_divergence(mesh, velocity):
    """Largest central-difference divergence over active nodes."""
    hx, hy = mesh.spacing
    u = mesh.grid(velocity[:, 0])
    v = mesh.grid(velocity[:, 1])
    div = np.gradient(u, hx, axis=1) + np.gradient(v, hy, axis=0)
    return float(np.abs(div.ravel()[mesh.active_mask]).max())


def analytic_flow(kind, mesh, kappa=1.0, floor=0.0, **params):
    """Analytic stand-ins for precomputed flow fields.

    ``uniform``
        constant ``velocity=(u1, u2)``.
    ``channel``
        parabolic profile along ``x1`` with peak ``u_max``; zero on the
        ``x2`` walls.
    ``recirculation``
        a single domain-filling vortex of peak speed ``u_max`` superposed on a
        uniform stream of speed ``inlet`` entering from the lower-right corner
        towards the upper-left one. Both parts are divergence free.
    """
    x = mesh.nodes[:, 0]
    y = mesh.nodes[:, 1]
    (l1, l2), (u1, u2) = mesh.domain.lower, mesh.domain.upper
    if kind == "uniform":
        vel = np.tile(np.asarray(params.get("velocity", (1.0, 0.0)), dtype=float), (mesh.n_nodes, 1))
    elif kind == "channel":
        t = (y - l2) / (u2 - l2)
        vel = np.column_stack([params.get("u_max", 1.0) * 4.0 * t * (1.0 - t), np.zeros_like(t)])
    elif kind == "recirculation":
        lx, ly = u1 - l1, u2 - l2
        xi, eta = (x - l1) / lx, (y - l2) / ly
        u_max = params.get("u_max", 1.0)
        inlet = params.get("inlet", 0.0)
        # stream function u_max * ly / pi * sin(pi xi) sin(pi eta)
        vel = np.column_stack([
            u_max * np.sin(np.pi * xi) * np.cos(np.pi * eta),
            -u_max * np.cos(np.pi * xi) * np.sin(np.pi * eta) * (ly / lx),
        ])
        vel += inlet * np.array([-1.0, 1.0]) / np.sqrt(2.0)
    else:
        raise ValueError(f"unknown analytic flow kind {kind!r}")
    kap = np.full(mesh.n_nodes, float(kappa)) if np.isscalar(kappa) else np.asarray(kappa, dtype=float)
    return _finalize(mesh, vel, kap, floor)


def load_flow(path, mesh, floor=0.0):
    """Read a ``node_id,u1,u2,kappa`` CSV with one row per grid node."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != mesh.n_nodes:
        raise ValueError(f"flow file has {len(rows)} rows, mesh has {mesh.n_nodes} nodes")
    rows.sort(key=lambda r: int(r["node_id"]))
    if [int(r["node_id"]) for r in rows] != list(range(mesh.n_nodes)):
        raise ValueError("node ids in flow file must be 0..n-1")
    data = np.array([[float(r["u1"]), float(r["u2"]), float(r["kappa"])] for r in rows])
    return _finalize(mesh, data[:, :2], data[:, 2], floor)


def save_flow(flow, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "u1", "u2", "kappa"])
        for k in range(len(flow.diffusivity)):
            w.writerow([k, repr(float(flow.velocity[k, 0])), repr(float(flow.velocity[k, 1])),
                        repr(float(flow.diffusivity[k]))])


def resample_flow(flow, source_mesh, target_mesh):
    """Bilinear transfer of a nodal flow onto another grid over the same domain."""
    pts = target_mesh.nodes
    out = []
    for arr in (flow.velocity[:, 0], flow.velocity[:, 1], flow.diffusivity):
        f = RegularGridInterpolator((source_mesh.ys, source_mesh.xs), source_mesh.grid(arr))
        out.append(f(pts[:, ::-1]))
    return FlowField(velocity=np.column_stack(out[:2]), diffusivity=np.maximum(out[2], flow.floor), floor=flow.floor)
