"""Next-best-measurement selection by maximizing the smallest FIM eigenvalue.

With ``g(x) = psi(x) S`` the problem ``max_x lambda_min(F + g^T g)`` is posed as
``min -z`` subject to ``B(z, x) = (eps_bar + z) I - F - g^T g <= 0`` and solved
by sequential SDP: each step solves a convexified tangent problem for the
direction and the multiplier, then backtracks on an exact-penalty function.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ._sdp import solve_lmi_qp
from .geometry import decompose_convex

logger = logging.getLogger(__name__)


def fim(S, X):
    """``F = S^T X^T X S``."""
    XS = np.asarray(X) @ np.asarray(S)
    return XS.T @ XS


def sensitivity_matrix(rom, params):
    """``S(p) = A^{-1} M_p`` with ``M_p = -db/dp``."""
    return -rom.solve(rom.rhs_jacobian(params))


@dataclass
class PlannerState:
    rom: object
    S: np.ndarray
    X: np.ndarray
    eps_bar: float = 1e-8
    delta: float = 1e-6
    gamma_bar: float = 1.0
    rho: float = 0.5
    omega: float = 1e-4
    eps1: float = 1e-6
    eps2: float = 1e-6
    eps3: float = 1e-6
    max_iter: int = 100
    sample_stride: int = 4
    F: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, self.S.shape[0])
        self.F = fim(self.S, self.X)

    @classmethod
    def from_problem(cls, rom, params, waypoints, **kw):
        S = sensitivity_matrix(rom, params)
        X = rom.eval_basis(waypoints) if len(waypoints) else np.zeros((0, rom.N))
        return cls(rom=rom, S=S, X=X, **kw)

    @property
    def q(self):
        return self.S.shape[1]

    # ------------------------------------------------------------------
    def gain(self, points):
        """``lambda_min(F + S^T psi(x)^T psi(x) S)`` at each point."""
        g = self.rom.eval_basis(points) @ self.S
        mats = self.F[None] + g[:, :, None] * g[:, None, :]
        return np.linalg.eigvalsh(mats)[:, 0]

    def b_matrix(self, z, x, order=0):
        """``B`` alone (order 0), with ``[B1, B2, B3]`` (order 1), or also the 3x3 second derivatives."""
        x = np.asarray(x, dtype=float)
        I = np.eye(self.q)
        g = (self.rom.eval_basis(x) @ self.S)[0]
        B = (self.eps_bar + z) * I - self.F - np.outer(g, g)
        if order == 0:
            return B
        d1, d2 = (a @ self.S for a in self.rom.eval_basis_grad(x))
        g1, g2 = d1[0], d2[0]
        sym = lambda a, b: np.outer(a, b) + np.outer(b, a)
        D1 = [I, -sym(g1, g), -sym(g2, g)]
        if order == 1:
            return B, D1
        h11, h12, h22 = ((a @ self.S)[0] for a in self.rom.eval_basis_hess(x))
        Z = np.zeros_like(B)
        B22 = -(sym(h11, g) + 2 * np.outer(g1, g1))
        B33 = -(sym(h22, g) + 2 * np.outer(g2, g2))
        B23 = -(sym(h12, g) + sym(g1, g2))
        D2 = [[Z, Z, Z], [Z, B22, B23], [Z, B23, B33]]
        return B, D1, D2

    def penalty(self, v, gamma):
        lmax = np.linalg.eigvalsh(self.b_matrix(v[0], v[1:]))[-1]
        return -v[0] + gamma * max(lmax, 0.0)

    # ------------------------------------------------------------------
    def coarse_points(self, box):
        mesh = self.rom.mesh
        k = self.sample_stride
        ii, jj = np.meshgrid(np.arange(0, mesh.nx, k), np.arange(0, mesh.ny, k))
        idx = (jj * mesh.nx + ii).ravel()
        idx = idx[mesh.active_mask[idx]]
        pts = mesh.nodes[idx]
        inside = np.all((pts >= np.asarray(box.lower) - 1e-12) & (pts <= np.asarray(box.upper) + 1e-12), axis=1)
        pts = pts[inside]
        pts = pts[[mesh.domain.contains(p) for p in pts]]
        if len(pts) == 0:
            pts = np.array([0.5 * (np.asarray(box.lower) + np.asarray(box.upper))])
        return pts

    def tangent_sdp(self, v, Lam, box, H=None):
        """Solve the convexified tangent problem at ``v = (z, x1, x2)``."""
        B, D1, D2 = self.b_matrix(v[0], v[1:], order=2)
        if H is None:
            H = lagrangian_hessian(D2, Lam, self.delta)
        x = v[1:]
        lo, hi = np.asarray(box.lower), np.asarray(box.upper)
        # box rows: x + d_x <= hi and -(x + d_x) <= -lo
        Gm = np.array([[0, 1, 0], [0, 0, 1], [0, -1, 0], [0, 0, -1]], dtype=float)
        hv = np.concatenate([hi - x, x - lo])
        centre = 0.5 * (lo + hi)
        dx0 = 1e-3 * (centre - x)
        Fs = np.array(D1)
        lmax = np.linalg.eigvalsh(B + dx0[0] * Fs[1] + dx0[1] * Fs[2])[-1]
        d0 = np.array([-lmax - 1.0 - abs(lmax), dx0[0], dx0[1]])
        c = np.array([-1.0, 0.0, 0.0])
        res = solve_lmi_qp(c, H, B, Fs, Gm, hv, d0=d0)
        return res, B, H


def lagrangian_hessian(D2, Lam, delta):
    """``[(B^(ij), Lambda)]`` shifted so its smallest eigenvalue is at least ``delta``."""
    n = len(D2)
    L = np.array([[np.sum(D2[i][j] * Lam) for j in range(n)] for i in range(n)])
    L = 0.5 * (L + L.T)
    mu = max(0.0, delta - np.linalg.eigvalsh(L)[0])
    return L + mu * np.eye(n)


@dataclass
class PlanResult:
    x: np.ndarray
    value: float
    x0: np.ndarray
    value0: float
    converged: bool
    improved: bool
    iterations: int
    message: str
    trace: list = field(default_factory=list, repr=False)

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "z", "x1", "x2", "lambda_min", "step", "gamma", "grad_lagrangian"])
            for row in self.trace:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def next_best(state, box=None, cover=None):
    """Sample ``g`` on a coarse grid, then refine the best point by SSDP.

    Without ``box`` the whole domain is sampled and the SSDP runs inside the
    largest convex subdomain of ``cover`` that holds the sampled maximizer.
    """
    domain = state.rom.mesh.domain
    pts = state.coarse_points(box or domain.bounding_box)
    vals = state.gain(pts)
    i0 = int(np.argmax(vals))  # first maximizer
    x0, g0 = pts[i0].copy(), float(vals[i0])
    if box is None:
        box = (cover or decompose_convex(domain)).largest_containing(x0)
    v = np.array([g0, x0[0], x0[1]])
    q = state.q
    Lam = np.eye(q) / q
    gamma = np.trace(Lam) + state.gamma_bar
    trace = []
    converged = False
    message = "iteration limit"
    k = 0
    for k in range(state.max_iter):
        try:
            res, B, H = state.tangent_sdp(v, Lam, box)
        except (np.linalg.LinAlgError, ValueError) as exc:
            message = f"tangent problem failed: {exc}"
            break
        d, Lam_next = res.d, res.Lambda
        _, D1 = state.b_matrix(v[0], v[1:], order=1)
        grad_L = np.array([-1.0, 0.0, 0.0]) + np.array([np.sum(Di * Lam_next) for Di in D1])
        # box multipliers enter the stationarity test as well
        Gm = np.array([[0, 1, 0], [0, 0, 1], [0, -1, 0], [0, 0, -1]], dtype=float)
        grad_L = grad_L + Gm.T @ res.mu
        lmax = max(np.linalg.eigvalsh(B)[-1], 0.0)
        comp = abs(np.sum(Lam_next * B))
        gnorm = float(np.linalg.norm(grad_L))
        trace.append((k, float(v[0]), float(v[1]), float(v[2]), float(state.gain(v[1:][None])[0]),
                      float(np.linalg.norm(d)), float(gamma), gnorm))
        if gnorm <= state.eps1 and lmax <= state.eps2 and comp <= state.eps3:
            converged, message = True, "KKT conditions satisfied"
            break
        if gamma < np.trace(Lam_next) + state.gamma_bar:
            gamma = max(1.5 * gamma, np.trace(Lam_next) + state.gamma_bar)
        Delta = -d @ H @ d + np.sum(Lam_next * B) - gamma * lmax
        theta = state.penalty(v, gamma)
        alpha = 1.0
        accepted = False
        for _ in range(60):
            trial = v + alpha * d
            trial[1:] = np.clip(trial[1:], box.lower, box.upper)
            if state.penalty(trial, gamma) <= theta + state.omega * alpha * Delta:
                accepted = True
                break
            alpha *= state.rho
        if not accepted:
            message = "line search failed"
            break
        v = trial
        Lam = Lam_next
    value = float(state.gain(v[1:][None])[0])
    if not converged:
        logger.info("SSDP did not converge (%s); using sampled point", message)
        return PlanResult(x=x0, value=g0, x0=x0, value0=g0, converged=False, improved=False,
                          iterations=k + 1, message=message, trace=trace)
    return PlanResult(x=v[1:].copy(), value=value, x0=x0, value0=g0, converged=True,
                      improved=value > g0 + 1e-12 * max(1.0, abs(g0)), iterations=k + 1,
                      message=message, trace=trace)
