"""Tower-function source parameterization.

A source is ``s_d(x) = sum_j beta_j * 1[lower_j <= x <= upper_j]``. The flat
parameter vector stores five entries per tower in the order
``(beta, lower_1, lower_2, upper_1, upper_2)``.
"""

import json

import numpy as np

from .geometry import Box

PER_TOWER = 5


class SourceParams:
    """Parameter vector ``p`` for ``M`` towers, each with its own bounding box."""

    def __init__(self, p, bounds, beta_max=np.inf):
        p = np.asarray(p, dtype=float).ravel()
        bounds = [b if isinstance(b, Box) else Box(*b) for b in bounds]
        if p.size != PER_TOWER * len(bounds):
            raise ValueError(f"parameter vector has {p.size} entries, expected {PER_TOWER * len(bounds)}")
        self.p = p
        self.bounds = bounds
        self.beta_max = float(beta_max)

    @classmethod
    def from_towers(cls, towers, bounds, beta_max=np.inf):
        """Build from ``(beta, lower, upper)`` triples."""
        p = [[beta, lower[0], lower[1], upper[0], upper[1]] for beta, lower, upper in towers]
        return cls(np.array(p, dtype=float).ravel(), bounds, beta_max)

    @property
    def M(self):
        return len(self.bounds)

    def with_p(self, p):
        return SourceParams(p, self.bounds, self.beta_max)

    def copy(self):
        return SourceParams(self.p.copy(), list(self.bounds), self.beta_max)

    def block(self, j):
        return self.p[PER_TOWER * j: PER_TOWER * (j + 1)]

    def towers(self):
        for j in range(self.M):
            b = self.block(j)
            yield float(b[0]), (float(b[1]), float(b[2])), (float(b[3]), float(b[4]))

    def areas(self):
        return np.array([max(u[0] - l[0], 0.0) * max(u[1] - l[1], 0.0) for _, l, u in self.towers()])

    def lower_vector(self):
        lo = []
        for b in self.bounds:
            lo += [0.0, b.lower[0], b.lower[1], b.lower[0], b.lower[1]]
        return np.array(lo)

    def upper_vector(self):
        hi = []
        for b in self.bounds:
            hi += [self.beta_max, b.upper[0], b.upper[1], b.upper[0], b.upper[1]]
        return np.array(hi)

    def is_feasible(self, tol=1e-12):
        p = self.p
        if np.any(p < self.lower_vector() - tol) or np.any(p > self.upper_vector() + tol):
            return False
        return all(l[k] <= u[k] + tol for _, l, u in self.towers() for k in range(2))

    def tower_eval(self, j, x):
        _, l, u = list(self.towers())[j]
        return tower_eval(l, u, x)

    def source_field(self, x):
        return source_field(self, x)

    def to_json(self):
        return [
            {"beta": beta, "lower": list(l), "upper": list(u), "bounds": self.bounds[j].as_list()}
            for j, (beta, l, u) in enumerate(self.towers())
        ]

    @classmethod
    def from_json(cls, data, default_bounds=None):
        towers, bounds = [], []
        for t in data:
            towers.append((t["beta"], t["lower"], t["upper"]))
            if "bounds" in t:
                bounds.append(Box(*t["bounds"]))
            elif default_bounds is not None:
                bounds.append(default_bounds)
            else:
                raise ValueError("tower has no bounds and no default was given")
        return cls.from_towers(towers, bounds)

    def __repr__(self):
        return f"SourceParams(M={self.M}, p={np.array2string(self.p, precision=4)})"


def tower_eval(lower, upper, x):
    """1 when ``x`` lies in the closed box ``[lower, upper]``."""
    x = np.asarray(x, dtype=float)
    return float(np.all(x >= np.asarray(lower)) and np.all(x <= np.asarray(upper)))


def source_field(params, x):
    if not params.is_feasible():
        raise ValueError("source parameters are infeasible")
    return sum(beta * tower_eval(l, u, x) for beta, l, u in params.towers())


def project_feasible(params):
    """Euclidean projection onto ``{lo <= lower <= upper <= hi}`` per coordinate.

    An inverted edge pair moves to its midpoint first; clipping afterwards keeps
    the order because both edges share the same bounds.
    """
    p = params.p.copy()
    for j in range(params.M):
        b = p[PER_TOWER * j: PER_TOWER * (j + 1)]
        for k in range(2):
            if b[1 + k] > b[3 + k]:
                b[1 + k] = b[3 + k] = 0.5 * (b[1 + k] + b[3 + k])
    return params.with_p(np.clip(p, params.lower_vector(), params.upper_vector()))


def save_params(params, path):
    with open(path, "w") as fh:
        json.dump(params.to_json(), fh, indent=2)


def load_params(path, default_bounds=None):
    with open(path) as fh:
        return SourceParams.from_json(json.load(fh), default_bounds)
