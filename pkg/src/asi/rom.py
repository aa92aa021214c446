"""POD model reduction of the discrete AD operator.

Basis functions are stored as nodal columns ``psi`` (``n_nodes x N``) and
normalized to unit L2 norm, which makes them L2-orthonormal.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import _hats, fem
from .geometry import Domain, build_mesh

RANK_CUTOFF = 1e-12


def snapshot_matrix(snapshots):
    return np.vstack([s.c if hasattr(s, "c") else np.asarray(s) for s in snapshots])


def covariance(snapshots, mesh, mass=None):
    """``C_ij = (1/R) int c_i c_j`` with the consistent mass matrix."""
    S = snapshot_matrix(snapshots)
    if S.shape[1] != mesh.n_nodes:
        raise ValueError(f"snapshots have {S.shape[1]} entries, mesh has {mesh.n_nodes} nodes")
    M = fem.mass_matrix(mesh) if mass is None else mass
    C = S @ (M @ S.T) / S.shape[0]
    return 0.5 * (C + C.T)


def select_n(eigenvalues, eta):
    """Smallest ``N`` whose leading eigenvalues carry a fraction ``eta`` of the energy."""
    lam = np.asarray(eigenvalues, dtype=float)
    lam = np.where(lam > RANK_CUTOFF * lam[0], lam, 0.0)
    frac = np.cumsum(lam) / lam.sum()
    return int(np.searchsorted(frac, eta - 1e-12) + 1)


def pod_basis(C, snapshots, eta):
    """Eigen-decompose ``C`` and form unit-norm bases from snapshot combinations.

    Returns ``(psi, eigenvalues, N)``; ``eigenvalues`` holds the full sorted
    spectrum, ``psi`` only the retained ``N`` columns.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    S = snapshot_matrix(snapshots)
    lam, Q = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam, Q = lam[order], Q[:, order]
    if lam[0] <= 0:
        raise ValueError("all snapshots are zero")
    N = select_n(lam, eta)
    R = S.shape[0]
    psi = S.T @ Q[:, :N] / np.sqrt(R * lam[:N])
    return psi, lam, N


def reduce_operator(stiffness, psi):
    """Galerkin-projected operator ``A_ik = a(psi_k, psi_i)``."""
    P = psi[stiffness.free_index]
    A = P.T @ (stiffness.K @ P)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise fem.SingularSystemError(f"reduced operator is singular (cond={cond:.2e}); raise N or eta")
    return A


# Cubic Hermite weights on [0, 1]; rows: value at 0, value at 1, slope at 0, slope at 1.
def _hermite(s, deriv):
    s = np.asarray(s, dtype=float)
    if deriv == 0:
        cols = [2 * s**3 - 3 * s**2 + 1, -2 * s**3 + 3 * s**2, s**3 - 2 * s**2 + s, s**3 - s**2]
    elif deriv == 1:
        cols = [6 * s**2 - 6 * s, -6 * s**2 + 6 * s, 3 * s**2 - 4 * s + 1, 3 * s**2 - 2 * s]
    else:
        cols = [12 * s - 6, -12 * s + 6, 6 * s - 4, 6 * s - 2]
    return np.stack(cols, axis=-1)


@dataclass(eq=False)
class ReducedModel:
    """POD bases, reduced operator and spectrum on a structured mesh."""

    mesh: object
    psi: np.ndarray
    A: np.ndarray
    eigenvalues: np.ndarray
    eta: float
    _lu: tuple = field(default=None, repr=False)
    _tables: dict = field(default=None, repr=False)

    @property
    def N(self):
        return self.psi.shape[1]

    @property
    def psi_grid(self):
        return self.mesh.grid(self.psi)

    # -- reduced solves -------------------------------------------------
    def lu(self):
        if self._lu is None:
            self._lu = sla.lu_factor(self.A)
        return self._lu

    def solve(self, b, transpose=False):
        return sla.lu_solve(self.lu(), b, trans=1 if transpose else 0)

    def field(self, coef):
        """Nodal field ``psi @ coef``."""
        return self.psi @ coef

    # -- tower integrals ------------------------------------------------
    def contract(self, wy, wx):
        """``sum_{j,i} wy[j] wx[i] psi[j, i, :]`` for separable nodal weights."""
        G = self.psi_grid
        return wx @ np.tensordot(wy, G, axes=(0, 0))

    def tower_factors(self, lower, upper):
        """Per-axis integrals and their endpoint derivatives for one tower."""
        xs, ys = self.mesh.xs, self.mesh.ys
        return {
            "Ix": _hats.hat_integrals(xs, lower[0], upper[0]),
            "Iy": _hats.hat_integrals(ys, lower[1], upper[1]),
            "dIx_lo": -_hats.hat_values(xs, lower[0]),
            "dIx_hi": _hats.hat_values(xs, upper[0]),
            "dIy_lo": -_hats.hat_values(ys, lower[1]),
            "dIy_hi": _hats.hat_values(ys, upper[1]),
            "d2Ix_lo": -_hats.hat_slopes(xs, lower[0]),
            "d2Ix_hi": _hats.hat_slopes(xs, upper[0]),
            "d2Iy_lo": -_hats.hat_slopes(ys, lower[1]),
            "d2Iy_hi": _hats.hat_slopes(ys, upper[1]),
        }

    def reduced_rhs(self, params):
        """``b_i = int s_d psi_i`` for a :class:`~asi.source.SourceParams`."""
        b = np.zeros(self.N)
        for beta, lower, upper in params.towers():
            t = self.tower_factors(lower, upper)
            b += beta * self.contract(t["Iy"], t["Ix"])
        return b

    def rhs_jacobian(self, params):
        """``db/dp`` as an ``N x 5M`` matrix, columns ordered ``(beta, lo1, lo2, hi1, hi2)``."""
        cols = []
        for beta, lower, upper in params.towers():
            t = self.tower_factors(lower, upper)
            cols += [
                self.contract(t["Iy"], t["Ix"]),
                beta * self.contract(t["Iy"], t["dIx_lo"]),
                beta * self.contract(t["dIy_lo"], t["Ix"]),
                beta * self.contract(t["Iy"], t["dIx_hi"]),
                beta * self.contract(t["dIy_hi"], t["Ix"]),
            ]
        return np.column_stack(cols) if cols else np.zeros((self.N, 0))

    def reduced_solve(self, params):
        return self.solve(self.reduced_rhs(params))

    # -- point evaluation -----------------------------------------------
    def derivative_tables(self):
        """Nodal finite-difference tables of first and second derivatives."""
        if self._tables is None:
            hx, hy = self.mesh.spacing
            G = self.psi_grid
            fx = np.gradient(G, hx, axis=1, edge_order=2)
            fy = np.gradient(G, hy, axis=0, edge_order=2)
            self._tables = {
                "f": G,
                "fx": fx,
                "fy": fy,
                "fxy": np.gradient(fx, hy, axis=0, edge_order=2),
                "fxx": np.gradient(fx, hx, axis=1, edge_order=2),
                "fyy": np.gradient(fy, hy, axis=0, edge_order=2),
            }
        return self._tables

    @property
    def dpsi(self):
        t = self.derivative_tables()
        return t["fx"], t["fy"]

    @property
    def d2psi(self):
        t = self.derivative_tables()
        return t["fxx"], t["fxy"], t["fyy"]

    def _evaluate(self, points, dx, dy):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        for x in pts:
            self.mesh.check_point(x)
        hx, hy = self.mesh.spacing
        loc = np.array([self.mesh.locate(x) for x in pts])
        i, j = loc[:, 0].astype(int), loc[:, 1].astype(int)
        Wx = _hermite(loc[:, 2], dx) / hx**dx
        Wy = _hermite(loc[:, 3], dy) / hy**dy
        a = np.array([0, 1])
        ia = i[:, None, None] + a[None, :, None]
        jb = j[:, None, None] + a[None, None, :]
        t = self.derivative_tables()
        out = 0.0
        for key, ux, uy in (("f", 0, 0), ("fx", 1, 0), ("fy", 0, 1), ("fxy", 1, 1)):
            # value weights sit in columns 0:2, slope weights (scaled by h) in 2:4
            wx = Wx[:, 2 * ux: 2 * ux + 2] * (hx if ux else 1.0)
            wy = Wy[:, 2 * uy: 2 * uy + 2] * (hy if uy else 1.0)
            out = out + np.einsum("pa,pb,pabk->pk", wx, wy, t[key][jb, ia])
        return out

    def eval_basis(self, points):
        """Rows ``psi(x)`` for each point; shape ``(P, N)``."""
        return self._evaluate(points, 0, 0)

    def eval_basis_grad(self, points):
        """``(d psi/dx1, d psi/dx2)``, each ``(P, N)``."""
        return self._evaluate(points, 1, 0), self._evaluate(points, 0, 1)

    def eval_basis_hess(self, points):
        """``(d2/dx1^2, d2/dx1dx2, d2/dx2^2)``, each ``(P, N)``."""
        return self._evaluate(points, 2, 0), self._evaluate(points, 1, 1), self._evaluate(points, 0, 2)

    # -- persistence ----------------------------------------------------
    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savez(d / "rom.npz", psi=self.psi, A=self.A, eigenvalues=self.eigenvalues)
        meta = {"domain": self.mesh.domain.to_dict(), "nx": self.mesh.nx, "ny": self.mesh.ny,
                "eta": self.eta, "N": self.N, "R": int(len(self.eigenvalues))}
        (d / "meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text())
        mesh = build_mesh(Domain.from_dict(meta["domain"]), meta["nx"], meta["ny"])
        with np.load(d / "rom.npz") as z:
            return cls(mesh=mesh, psi=z["psi"], A=z["A"], eigenvalues=z["eigenvalues"], eta=meta["eta"])


def build_reduced_model(mesh, flow, cover_nx, cover_ny, eta=0.97, stiffness=None, snapshots=None):
    """Snapshots, POD and reduced operator in one call."""
    stiffness = stiffness or fem.assemble(mesh, flow)
    if snapshots is None:
        snapshots = fem.generate_snapshots(mesh, flow, cover_nx, cover_ny, stiffness=stiffness)
    M = fem.mass_matrix(mesh)
    C = covariance(snapshots, mesh, M)
    psi, lam, _ = pod_basis(C, snapshots, eta)
    A = reduce_operator(stiffness, psi)
    return ReducedModel(mesh=mesh, psi=psi, A=A, eigenvalues=lam, eta=eta)
