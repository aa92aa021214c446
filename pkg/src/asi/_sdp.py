"""Log-barrier interior-point solver for tiny LMI-constrained QPs.

Solves ``min c.d + 1/2 d.H.d`` subject to ``F0 + sum_i d_i F_i <= 0`` (negative
semidefinite) and ``G d <= h``. Meant for a handful of variables and matrices
of order ~10; everything is dense.
"""

from dataclasses import dataclass

import numpy as np


class InfeasibleStart(ValueError):
    pass


@dataclass
class LmiQpResult:
    d: np.ndarray
    Lambda: np.ndarray
    mu: np.ndarray
    kkt_residual: float
    gap: float
    iterations: int


def _slacks(d, F0, Fs, G, h):
    S = -(F0 + np.tensordot(d, Fs, axes=(0, 0)))
    return S, h - G @ d


def _barrier(t, d, c, H, F0, Fs, G, h):
    S, s = _slacks(d, F0, Fs, G, h)
    if np.any(s <= 0):
        return np.inf
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return np.inf
    return t * (c @ d + 0.5 * d @ H @ d) - 2.0 * np.log(np.diag(L)).sum() - np.log(s).sum()


def solve_lmi_qp(c, H, F0, Fs, G=None, h=None, d0=None, tol=1e-10, max_newton=200):
    """Return the primal solution, the LMI multiplier and the linear multipliers.

    ``d0`` must satisfy both constraint sets strictly.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    Fs = np.asarray(Fs, dtype=float)
    q = F0.shape[0]
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    d = np.zeros(n) if d0 is None else np.asarray(d0, dtype=float).copy()
    if not np.isfinite(_barrier(1.0, d, c, H, F0, Fs, G, h)):
        raise InfeasibleStart("starting point is not strictly feasible")

    m_total = q + len(h)
    t = 1.0
    iters = 0
    while True:
        for _ in range(max_newton):
            iters += 1
            S, s = _slacks(d, F0, Fs, G, h)
            try:
                Sinv = np.linalg.inv(S)
                P = np.einsum("ab,ibc->iac", Sinv, Fs)
                grad = t * (c + H @ d) + np.einsum("iaa->i", P) + G.T @ (1.0 / s)
                hess = t * H + np.einsum("iab,jba->ij", P, P) + (G.T / s**2) @ G
                step = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)):
                break
            dec2 = -grad @ step
            if dec2 / 2.0 <= 1e-14:
                break
            phi = _barrier(t, d, c, H, F0, Fs, G, h)
            a = 1.0
            while a > 1e-16:
                trial = _barrier(t, d + a * step, c, H, F0, Fs, G, h)
                if trial <= phi - 0.25 * a * dec2:
                    break
                a *= 0.5
            d = d + a * step
            if a * np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(d)):
                break
        if m_total / t < tol:
            break
        t *= 20.0

    S, s = _slacks(d, F0, Fs, G, h)
    Lam = np.linalg.inv(S) / t
    Lam = 0.5 * (Lam + Lam.T)
    mu = 1.0 / (t * s)
    grad = c + H @ d
    resid = lambda L, m: np.linalg.norm(grad + np.einsum("ab,iba->i", L, Fs) + G.T @ m)
    best = (resid(Lam, mu), Lam, mu)
    polished = _polish(grad, Fs, G, S, s, h, F0)
    if polished is not None and resid(*polished) < best[0]:
        best = (resid(*polished),) + polished
    return LmiQpResult(d=d, Lambda=best[1], mu=best[2], kkt_residual=float(best[0]),
                       gap=m_total / t, iterations=iters)


def _polish(grad, Fs, G, S, s, h, F0, rel=1e-7):
    """Refit multipliers on the active eigenspace and active rows by least squares.

    Barrier duals ``S^{-1}/t`` inherit the centering error amplified by the
    tiny active slacks; stationarity restricted to the active set is a small
    well-posed linear system instead.
    """
    ev, U = np.linalg.eigh(S)
    Ua = U[:, ev <= rel * (1.0 + np.abs(F0).max())]
    act = np.flatnonzero(s <= rel * (1.0 + np.abs(h)))
    r = Ua.shape[1]
    pairs = [(a, b) for a in range(r) for b in range(a, r)]
    cols = []
    for a, b in pairs:
        E = np.outer(Ua[:, a], Ua[:, b])
        E = E + E.T if a != b else E
        cols.append(np.einsum("ab,iba->i", E, Fs))
    cols += [G[k] for k in act]
    if not cols:
        return None
    coef = np.linalg.lstsq(np.column_stack(cols), -grad, rcond=None)[0]
    Y = np.zeros((r, r))
    for (a, b), v in zip(pairs, coef[:len(pairs)]):
        Y[a, b] = Y[b, a] = v
    if r and np.linalg.eigvalsh(Y)[0] < 0:
        return None
    mu = np.zeros(len(s))
    mu[act] = coef[len(pairs):]
    if np.any(mu < 0):
        return None
    return Ua @ Y @ Ua.T, mu
