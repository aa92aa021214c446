"""Bilinear-quadrilateral Galerkin discretization of the steady AD equation.

Solves ``-div(kappa grad c) + div(c u) = s`` in the domain with ``c = 0`` on
the outer boundary and on obstacle walls, using the weak form
``a(c, v) = int kappa grad c . grad v + int v u . grad c``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _hats
from .geometry import Box

# reference corners (xi, eta) in counter-clockwise order
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class SingularSystemError(RuntimeError):
    pass


def _shape_tables(points):
    """Shape values ``(G, 4)`` and reference gradients ``(G, 4, 2)``."""
    xi = points[:, 0][:, None]
    eta = points[:, 1][:, None]
    N = 0.25 * (1 + _CORNERS[:, 0] * xi) * (1 + _CORNERS[:, 1] * eta)
    dxi = 0.25 * _CORNERS[:, 0] * (1 + _CORNERS[:, 1] * eta)
    deta = 0.25 * _CORNERS[:, 1] * (1 + _CORNERS[:, 0] * xi)
    return N, np.stack([dxi, deta], axis=-1)


def gauss_rule(order=2):
    pts, wts = np.polynomial.legendre.leggauss(order)
    P = np.array([(a, b) for b in pts for a in pts])
    W = np.array([wa * wb for wb in wts for wa in wts])
    return P, W


def _cell_geometry(mesh):
    hx, hy = mesh.spacing
    cells = mesh.cell_nodes()
    origin = mesh.nodes[cells[:, 0]]
    return cells, origin, hx, hy


def mass_matrix(mesh):
    """Consistent mass matrix over live cells (all grid nodes)."""
    cells, _, hx, hy = _cell_geometry(mesh)
    P, W = gauss_rule(2)
    N, _ = _shape_tables(P)
    Me = np.einsum("g,ga,gb->ab", W, N, N) * (hx * hy / 4.0)
    live = cells[mesh.live_cells]
    rows = np.repeat(live, 4, axis=1).ravel()
    cols = np.tile(live, (1, 4)).ravel()
    vals = np.tile(Me.ravel(), live.shape[0])
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def element_matrices(mesh, flow):
    """Element stiffness ``Ke[c, a, b] = a(phi_b, phi_a)`` restricted to cell ``c``."""
    cells, _, hx, hy = _cell_geometry(mesh)
    P, W = gauss_rule(2)
    N, dN = _shape_tables(P)
    grad = dN * np.array([2.0 / hx, 2.0 / hy])
    det = hx * hy / 4.0
    kap = flow.diffusivity[cells] @ N.T
    ux = flow.velocity[cells, 0] @ N.T
    uy = flow.velocity[cells, 1] @ N.T
    diff = np.einsum("g,cg,gad,gbd->cab", W, kap, grad, grad)
    adv = np.einsum("g,ga,cg,gb->cab", W, N, ux, grad[:, :, 0]) + np.einsum("g,ga,cg,gb->cab", W, N, uy, grad[:, :, 1])
    return cells, det * (diff + adv)


@dataclass(eq=False)
class Stiffness:
    """Stiffness operator on the free (active, non-Dirichlet) nodes."""

    mesh: object
    K: sp.csc_matrix
    free_index: np.ndarray
    full: sp.csr_matrix = field(repr=False)
    _lu: object = field(default=None, repr=False)
    _luT: object = field(default=None, repr=False)

    @property
    def n_free(self):
        return len(self.free_index)

    def factor(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.K, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SingularSystemError(
                    "stiffness matrix is singular; raise the diffusivity floor"
                ) from exc
            self._luT = spla.splu(self.K.T.tocsc(), permc_spec="COLAMD")
        return self._lu

    def restrict(self, f):
        return np.asarray(f)[self.free_index]

    def extend(self, c_free):
        c_free = np.asarray(c_free)
        out = np.zeros((self.mesh.n_nodes,) + c_free.shape[1:])
        out[self.free_index] = c_free
        return out

    def solve(self, f, transpose=False):
        """Solve with a nodal load (vector or ``n_nodes x k``); Dirichlet nodes return 0."""
        self.factor()
        lu = self._luT if transpose else self._lu
        rhs = self.restrict(f)
        c = lu.solve(np.ascontiguousarray(rhs, dtype=float))
        if not np.all(np.isfinite(c)):
            raise SingularSystemError("forward solve produced non-finite values")
        return self.extend(c)


def assemble(mesh, flow):
    """Assemble ``K_ij = a(phi_j, phi_i)`` and eliminate Dirichlet nodes."""
    if flow.velocity.shape[0] != mesh.n_nodes or flow.diffusivity.shape[0] != mesh.n_nodes:
        raise ValueError("flow field and mesh have different node sets")
    cells, Ke = element_matrices(mesh, flow)
    live = mesh.live_cells
    cells, Ke = cells[live], Ke[live]
    rows = np.repeat(cells, 4, axis=1).ravel()
    cols = np.tile(cells, (1, 4)).ravel()
    full = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    full.sum_duplicates()
    free = np.flatnonzero(mesh.free_mask)
    K = full[free][:, free].tocsc()
    return Stiffness(mesh=mesh, K=K, free_index=free, full=full)


def tower_load(mesh, lower, upper, beta=1.0):
    """Exact load vector of ``beta * 1[lower <= x <= upper]``.

    Hat functions factor per axis, so each entry is a product of two exact
    1-D integrals. Entries on nodes touching dropped cells are not meaningful
    and are discarded by the Dirichlet elimination.
    """
    if beta < 0:
        raise ValueError("source intensity must be nonnegative")
    Ix = _hats.hat_integrals(mesh.xs, lower[0], upper[0])
    Iy = _hats.hat_integrals(mesh.ys, lower[1], upper[1])
    return beta * np.outer(Iy, Ix).ravel()


def load_vector(mesh, s, allow_negative=False):
    """Load vector ``f_i = int s phi_i``.

    ``s`` may be a nodal array, a callable ``s(x1, x2)`` integrated by 3x3
    Gauss quadrature per cell, or a sequence of ``(beta, lower, upper)``
    towers integrated exactly. Negative sources are rejected unless
    ``allow_negative`` is set (manufactured-solution checks need it).
    """
    if callable(s):
        cells, origin, hx, hy = _cell_geometry(mesh)
        P, W = gauss_rule(3)
        N, _ = _shape_tables(P)
        live = mesh.live_cells
        cells, origin = cells[live], origin[live]
        gx = origin[:, 0][:, None] + (P[:, 0] + 1.0) * hx / 2.0
        gy = origin[:, 1][:, None] + (P[:, 1] + 1.0) * hy / 2.0
        vals = np.asarray(s(gx, gy), dtype=float) * np.ones_like(gx)
        if not allow_negative and np.any(vals < 0):
            raise ValueError("source must be nonnegative")
        fe = np.einsum("g,cg,ga->ca", W, vals, N) * (hx * hy / 4.0)
        return np.bincount(cells.ravel(), weights=fe.ravel(), minlength=mesh.n_nodes)
    if isinstance(s, np.ndarray) and s.ndim == 1 and s.size == mesh.n_nodes:
        if not allow_negative and np.any(s < 0):
            raise ValueError("source must be nonnegative")
        return mass_matrix(mesh) @ s
    f = np.zeros(mesh.n_nodes)
    for beta, lower, upper in s:
        f += tower_load(mesh, lower, upper, beta)
    return f


def solve_forward(stiffness, f):
    return stiffness.solve(f)


@dataclass(frozen=True, eq=False)
class Snapshot:
    c: np.ndarray
    lower: tuple
    upper: tuple


def cover_towers(domain, cover_nx, cover_ny):
    """Unit towers tiling the bounding box; towers fully inside an obstacle are skipped."""
    xe = np.linspace(domain.lower[0], domain.upper[0], cover_nx + 1)
    ye = np.linspace(domain.lower[1], domain.upper[1], cover_ny + 1)
    towers = []
    for j in range(cover_ny):
        for i in range(cover_nx):
            t = Box((xe[i], ye[j]), (xe[i + 1], ye[j + 1]))
            if any(o.contains_box(t) for o in domain.obstacles):
                continue
            towers.append(t)
    return towers


def generate_snapshots(mesh, flow, cover_nx, cover_ny, stiffness=None):
    """One forward solve per unit tower of a ``cover_nx x cover_ny`` tiling."""
    if cover_nx < 1 or cover_ny < 1:
        raise ValueError("cover grid must have at least one tower per axis")
    stiffness = stiffness or assemble(mesh, flow)
    towers = cover_towers(mesh.domain, cover_nx, cover_ny)
    F = np.column_stack([tower_load(mesh, t.lower, t.upper) for t in towers])
    C = stiffness.solve(F)
    return [Snapshot(c=C[:, k], lower=t.lower, upper=t.upper) for k, t in enumerate(towers)]


def l2_norm(mesh, c, M=None):
    M = mass_matrix(mesh) if M is None else M
    return float(np.sqrt(max(c @ (M @ c), 0.0)))


def l2_error(mesh, c, exact, order=3):
    """L2 distance between the bilinear interpolant of ``c`` and a callable."""
    cells, origin, hx, hy = _cell_geometry(mesh)
    P, W = gauss_rule(order)
    N, _ = _shape_tables(P)
    live = mesh.live_cells
    cells, origin = cells[live], origin[live]
    gx = origin[:, 0][:, None] + (P[:, 0] + 1.0) * hx / 2.0
    gy = origin[:, 1][:, None] + (P[:, 1] + 1.0) * hy / 2.0
    ch = c[cells] @ N.T
    err = (ch - exact(gx, gy)) ** 2
    return float(np.sqrt(np.einsum("g,cg->", W, err) * hx * hy / 4.0))


def max_principle_ok(c, rel_tol=1e-8):
    """Undershoot check for nonnegative sources: ``min(c) >= -rel_tol * max(c)``."""
    return bool(c.min() >= -rel_tol * max(c.max(), 0.0))
