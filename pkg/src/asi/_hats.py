"""Exact 1-D integrals and point values of piecewise-linear hat functions.

Bilinear nodal functions on a tensor grid factor as ``phi_x(x1) * phi_y(x2)``,
so every integral of a nodal function over an axis-aligned box reduces to a
product of the 1-D quantities computed here.
"""

import numpy as np


def _left_right(grid):
    grid = np.asarray(grid, dtype=float)
    left = np.empty_like(grid)
    right = np.empty_like(grid)
    left[0] = grid[0]
    left[1:] = grid[:-1]
    right[-1] = grid[-1]
    right[:-1] = grid[1:]
    return grid, left, right


def hat_antiderivative(grid, x):
    """Return ``int_{-inf}^{x} phi_i(t) dt`` for every node ``i`` of ``grid``."""
    g, lo, hi = _left_right(grid)
    hl = g - lo
    hr = hi - g
    t = np.clip(x, lo, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        rising = np.where(hl > 0, (t - lo) ** 2 / (2.0 * np.where(hl > 0, hl, 1.0)), 0.0)
        t = np.clip(x, g, hi)
        falling = np.where(
            hr > 0,
            0.5 * hr - (hi - t) ** 2 / (2.0 * np.where(hr > 0, hr, 1.0)),
            0.0,
        )
    return rising + falling


def hat_integrals(grid, a, b):
    """Integrals of each hat over ``[a, b]`` (zero when ``b <= a``)."""
    if b <= a:
        return np.zeros(len(grid))
    return hat_antiderivative(grid, b) - hat_antiderivative(grid, a)


def _locate(grid, x):
    g = np.asarray(grid, dtype=float)
    i = int(np.searchsorted(g, x, side="right")) - 1
    return min(max(i, 0), len(g) - 2)


def hat_values(grid, x):
    """Values ``phi_i(x)``; at most two entries are nonzero."""
    g = np.asarray(grid, dtype=float)
    out = np.zeros(len(g))
    if x < g[0] or x > g[-1]:
        return out
    i = _locate(g, x)
    h = g[i + 1] - g[i]
    s = (x - g[i]) / h
    out[i] = 1.0 - s
    out[i + 1] = s
    return out


def hat_slopes(grid, x):
    """Derivatives ``phi_i'(x)``, taken from the cell to the right of a node."""
    g = np.asarray(grid, dtype=float)
    out = np.zeros(len(g))
    if x < g[0] or x > g[-1]:
        return out
    i = _locate(g, x)
    h = g[i + 1] - g[i]
    out[i] = -1.0 / h
    out[i + 1] = 1.0 / h
    return out
