"""Finite-dimensional source identification on the reduced model.

Measurements are treated as point values, so the data term is
``1/2 sum_k (psi(x_k) c - y_k)^2`` and ``Lcc = X^T X`` with design matrix
``X[k] = psi(x_k)``. With ``A c = b(p)`` and ``A^T w = -X^T (X c - y)`` the
gradient is ``J_p - b_p^T w``.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .geometry import Box, decompose_convex
from .source import PER_TOWER, SourceParams, project_feasible

logger = logging.getLogger(__name__)

TAU_DEFAULT = 1e-8


class NoSourceDetected(RuntimeError):
    pass


class SiProblem:
    """Reduced model, measurement set and regularization weight."""

    def __init__(self, rom, waypoints, readings, tau=TAU_DEFAULT):
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        self.rom = rom
        self.waypoints = np.atleast_2d(np.asarray(waypoints, dtype=float)).reshape(-1, 2)
        self.readings = np.asarray(readings, dtype=float).ravel()
        if len(self.waypoints) != len(self.readings):
            raise ValueError("waypoints and readings differ in length")
        self.tau = float(tau)
        self.X = rom.eval_basis(self.waypoints) if len(self.readings) else np.zeros((0, rom.N))
        self.Lcc = self.X.T @ self.X
        self.Xy = self.X.T @ self.readings

    def with_measurements(self, waypoints, readings):
        return SiProblem(self.rom, waypoints, readings, self.tau)

    # ------------------------------------------------------------------
    def state(self, params):
        """Forward and adjoint solves shared by objective, gradient and Hessian."""
        b = self.rom.reduced_rhs(params)
        c = self.rom.solve(b)
        r = self.X @ c - self.readings
        w = self.rom.solve(-(self.X.T @ r), transpose=True)
        return c, r, w

    def regularization(self, params):
        betas = params.p[0::PER_TOWER]
        return self.tau * float(betas @ params.areas())

    def objective(self, params):
        c = self.rom.reduced_solve(params)
        r = self.X @ c - self.readings
        return 0.5 * float(r @ r) + self.regularization(params)

    def reg_gradient(self, params):
        g = np.zeros_like(params.p)
        for j, (beta, lo, hi) in enumerate(params.towers()):
            wx, wy = hi[0] - lo[0], hi[1] - lo[1]
            g[PER_TOWER * j: PER_TOWER * (j + 1)] = self.tau * np.array(
                [wx * wy, -beta * wy, -beta * wx, beta * wy, beta * wx])
        return g

    def gradient(self, params, w=None):
        if w is None:
            _, _, w = self.state(params)
        return self.reg_gradient(params) - self.rom.rhs_jacobian(params).T @ w

    def value_and_gradient(self, params):
        c, r, w = self.state(params)
        J = 0.5 * float(r @ r) + self.regularization(params)
        return J, self.gradient(params, w), w

    # ------------------------------------------------------------------
    def reg_hessian(self, params):
        """Block-diagonal second derivatives of ``tau * sum beta_j area_j``."""
        n = params.p.size
        H = np.zeros((n, n))
        for j, (beta, lo, hi) in enumerate(params.towers()):
            wx, wy = hi[0] - lo[0], hi[1] - lo[1]
            h = np.zeros((5, 5))
            # order: beta, lo1, lo2, hi1, hi2
            h[0, 1], h[0, 2], h[0, 3], h[0, 4] = -wy, -wx, wy, wx
            h[1, 2], h[1, 4], h[2, 3], h[3, 4] = beta, -beta, -beta, beta
            s = slice(PER_TOWER * j, PER_TOWER * (j + 1))
            H[s, s] = self.tau * (h + h.T)
        return H

    def ell_hessian(self, params, w):
        """Second derivatives of ``ell(p) = w^T b(p)``, block diagonal per tower."""
        n = params.p.size
        H = np.zeros((n, n))
        W = self.rom.mesh.grid(self.rom.field(w))
        for j, (beta, lo, hi) in enumerate(params.towers()):
            t = self.rom.tower_factors(lo, hi)
            q = lambda uy, ux: float(uy @ W @ ux)
            Ix, Iy = t["Ix"], t["Iy"]
            h = np.zeros((5, 5))
            h[0, 1] = q(Iy, t["dIx_lo"])
            h[0, 2] = q(t["dIy_lo"], Ix)
            h[0, 3] = q(Iy, t["dIx_hi"])
            h[0, 4] = q(t["dIy_hi"], Ix)
            h[1, 2] = beta * q(t["dIy_lo"], t["dIx_lo"])
            h[1, 4] = beta * q(t["dIy_hi"], t["dIx_lo"])
            h[2, 3] = beta * q(t["dIy_lo"], t["dIx_hi"])
            h[3, 4] = beta * q(t["dIy_hi"], t["dIx_hi"])
            h = h + h.T
            h[1, 1] = beta * q(Iy, t["d2Ix_lo"])
            h[3, 3] = beta * q(Iy, t["d2Ix_hi"])
            h[2, 2] = beta * q(t["d2Iy_lo"], Ix)
            h[4, 4] = beta * q(t["d2Iy_hi"], Ix)
            s = slice(PER_TOWER * j, PER_TOWER * (j + 1))
            H[s, s] = h
        return H

    def hessian_parts(self, params, w=None):
        """``(b_p, Hpp)`` with ``Hpp = J_pp - ell_pp``; enough for many products."""
        if w is None:
            _, _, w = self.state(params)
        return self.rom.rhs_jacobian(params), self.reg_hessian(params) - self.ell_hessian(params, w)

    def hess_vec(self, params, v, parts=None):
        """Hessian-vector product through two reduced solves."""
        bp, Hpp = parts if parts is not None else self.hessian_parts(params)
        v = np.asarray(v, dtype=float)
        h2 = bp @ v
        h1 = self.rom.solve(h2)
        h3 = self.Lcc @ h1
        h4 = self.rom.solve(h3, transpose=True)
        return bp.T @ h4 + Hpp @ v


# ----------------------------------------------------------------------
def sensitivity_field(problem):
    """Nodal adjoint field of the point-source sensitivity analysis."""
    d = problem.Xy
    if not np.any(d):
        raise NoSourceDetected("no source detected: all measurements are zero")
    w = problem.rom.solve(-d, transpose=True)
    return problem.rom.field(w)


def sa_initialize(problem, alpha=0.7, cover=None, beta_scale=1.0, beta_max=np.inf):
    """Thresholded sensitivity field, clustered by single linkage, one tower per cluster."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    mesh = problem.rom.mesh
    wd = sensitivity_field(problem)
    wd = np.where(mesh.free_mask, wd, 0.0)
    wmin = wd.min()
    if wmin >= 0:
        raise NoSourceDetected("no source detected: sensitivity field has no negative region")
    keep = np.flatnonzero(wd <= alpha * wmin)
    h = max(mesh.spacing)
    if keep.size == 1:
        labels = np.ones(1, dtype=int)
    else:
        labels = fcluster(linkage(mesh.nodes[keep], method="single"), t=3.0 * h, criterion="distance")
    cover = cover or decompose_convex(mesh.domain)
    centers = []
    for lab in np.unique(labels):
        members = keep[labels == lab]
        k = members[np.argmin(wd[members])]  # first minimum is the lowest node id
        centers.append(k)
    centers.sort(key=lambda k: (wd[k], k))
    peak = max(abs(wd[k]) for k in centers)
    towers, bounds = [], []
    for k in centers:
        z = mesh.nodes[k]
        box = cover.largest_containing(z)
        lo = np.clip(z - h, box.lower, box.upper)
        hi = np.clip(z + h, box.lower, box.upper)
        towers.append((min(abs(wd[k]) / peak * beta_scale, beta_max), lo, hi))
        bounds.append(box)
    return SourceParams.from_towers(towers, bounds, beta_max)


# ----------------------------------------------------------------------
@dataclass
class SiSolution:
    params: SourceParams
    objective: float
    iterations: int
    converged: bool
    w: np.ndarray
    message: str = ""
    trace: list = field(default_factory=list, repr=False)

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "objective", "projected_gradient", "p"])
            for row in self.trace:
                wr.writerow([row[0], repr(row[1]), repr(row[2]), " ".join(repr(float(v)) for v in row[3])])


def _projected_gradient(params, g):
    return params.p - project_feasible(params.with_p(params.p - g)).p


def _active_set(params, g, eps):
    lo, hi = params.lower_vector(), params.upper_vector()
    p = params.p
    active = ((p <= lo + eps) & (g > 0)) | ((p >= hi - eps) & (g < 0))
    # a closed edge pair whose descent direction would invert it
    for j in range(params.M):
        o = PER_TOWER * j
        for k in (1, 2):
            if p[o + k + 2] - p[o + k] <= eps and g[o + k + 2] - g[o + k] > 0:
                active[o + k] = active[o + k + 2] = True
    return active


def _truncated_cg(hv, g, max_iter, tol):
    """Steihaug-style CG on ``H d = -g``; stops at negative curvature."""
    d = np.zeros_like(g)
    r = -g.copy()
    s = r.copy()
    rr = r @ r
    for _ in range(max_iter):
        Hs = hv(s)
        curv = s @ Hs
        if curv <= 1e-14 * (s @ s):
            return d if np.any(d) else -g
        a = rr / curv
        d = d + a * s
        r = r - a * Hs
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol:
            break
        s = r + (rr_new / rr) * s
        rr = rr_new
    return d


def solve_si(problem, p0, max_iter=200, gtol=1e-6, armijo=1e-4, shrink=0.5, max_backtracks=40):
    """Projected Newton-CG with an active set and Armijo backtracking."""
    params = project_feasible(p0)
    J, g, w = problem.value_and_gradient(params)
    trace = []
    message = "iteration limit"
    converged = False
    it = 0
    for it in range(max_iter + 1):
        pg = np.linalg.norm(_projected_gradient(params, g))
        trace.append((it, J, float(pg), params.p.copy()))
        if pg <= gtol * (1.0 + abs(J)):
            converged, message = True, "projected gradient below tolerance"
            break
        if it == max_iter:
            break
        scale = max(1.0, float(np.abs(params.p).max()))
        active = _active_set(params, g, 1e-10 * scale)
        free = ~active
        parts = problem.hessian_parts(params, w)

        def hv(v_free):
            v = np.zeros_like(params.p)
            v[free] = v_free
            return problem.hess_vec(params, v, parts)[free]

        gf = g[free]
        gn = np.linalg.norm(gf)
        d = np.zeros_like(params.p)
        d[free] = _truncated_cg(hv, gf, max_iter=2 * free.sum(), tol=min(0.5, np.sqrt(gn)) * gn)
        if g @ d >= 0:
            d = np.where(free, -g, 0.0)

        accepted = False
        for direction in (d, -g):
            alpha = 1.0
            for _ in range(max_backtracks):
                trial = project_feasible(params.with_p(params.p + alpha * direction))
                Jt = problem.objective(trial)
                if Jt <= J + armijo * float(g @ (trial.p - params.p)) and Jt <= J:
                    accepted = True
                    break
                alpha *= shrink
            if accepted:
                break
        if not accepted:
            message = "line search failed"
            break
        params = trial
        J, g, w = problem.value_and_gradient(params)
    logger.debug("solve_si: %s after %d iterations, J=%.6e", message, it, J)
    return SiSolution(params=params, objective=J, iterations=it, converged=converged, w=w,
                      message=message, trace=trace)


def assign_bounds(params, cover):
    """Rebind each tower to the largest convex subdomain containing its center."""
    bounds = []
    for _, lo, hi in params.towers():
        z = 0.5 * (np.asarray(lo) + np.asarray(hi))
        bounds.append(cover.largest_containing(z))
    return project_feasible(SourceParams(params.p, bounds, params.beta_max))


def full_box(domain):
    return Box(domain.lower, domain.upper)
