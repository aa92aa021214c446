"""Rectangular domains with box obstacles, structured meshes and convex covers."""

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

_TOL = 1e-12


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned rectangle ``[lower, upper]``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))

    @property
    def area(self):
        return max(self.upper[0] - self.lower[0], 0.0) * max(self.upper[1] - self.lower[1], 0.0)

    def contains(self, x, tol=_TOL):
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))

    def contains_strictly(self, x, tol=_TOL):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > np.asarray(self.lower) + tol) and np.all(x < np.asarray(self.upper) - tol))

    def contains_box(self, other, tol=_TOL):
        return all(other.lower[k] >= self.lower[k] - tol and other.upper[k] <= self.upper[k] + tol for k in range(2))

    def overlaps_interior(self, other, tol=_TOL):
        """True when the two boxes share a region of positive area."""
        return all(
            min(self.upper[k], other.upper[k]) - max(self.lower[k], other.lower[k]) > tol for k in range(2)
        )

    def as_list(self):
        return [list(self.lower), list(self.upper)]


@dataclass(frozen=True)
class Domain:
    """Rectangle ``[lower, upper]`` minus a list of box obstacles."""

    lower: tuple
    upper: tuple
    obstacles: tuple = ()
    characteristic_length: float = None

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != 2 or len(upper) != 2:
            raise ValueError("only 2-D domains are supported")
        if not (upper[0] - lower[0] > 0 and upper[1] - lower[1] > 0):
            raise ValueError(f"degenerate domain: lower={lower}, upper={upper}")
        obstacles = tuple(o if isinstance(o, Box) else Box(*o) for o in self.obstacles)
        outer = Box(lower, upper)
        for o in obstacles:
            if o.area <= 0:
                raise ValueError(f"obstacle {o} has zero area")
            if not outer.contains_box(o):
                raise ValueError(f"obstacle {o} is not inside the domain")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "obstacles", obstacles)
        if self.characteristic_length is None:
            object.__setattr__(self, "characteristic_length", max(upper[0] - lower[0], upper[1] - lower[1]))
        elif self.characteristic_length <= 0:
            raise ValueError("characteristic_length must be positive")

    @property
    def bounding_box(self):
        return Box(self.lower, self.upper)

    @property
    def is_convex(self):
        return len(self.obstacles) == 0

    def contains(self, x):
        """Point lies in the closed outer box and outside every obstacle interior."""
        if not self.bounding_box.contains(x):
            return False
        return not any(o.contains_strictly(x) for o in self.obstacles)

    @classmethod
    def from_dict(cls, d):
        return cls(
            lower=d["lower"],
            upper=d["upper"],
            obstacles=tuple(Box(o[0], o[1]) if isinstance(o, (list, tuple)) else Box(o["lower"], o["upper"])
                            for o in d.get("obstacles", [])),
            characteristic_length=d.get("characteristic_length"),
        )

    def to_dict(self):
        return {
            "lower": list(self.lower),
            "upper": list(self.upper),
            "obstacles": [o.as_list() for o in self.obstacles],
            "characteristic_length": self.characteristic_length,
        }


def load_domain(path):
    with open(path) as fh:
        d = json.load(fh)
    return Domain.from_dict(d.get("domain", d))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Tensor grid of nodes with row-major ordering ``k = j * nx + i``."""

    domain: Domain
    nx: int
    ny: int
    xs: np.ndarray
    ys: np.ndarray
    nodes: np.ndarray
    active_mask: np.ndarray
    boundary_mask: np.ndarray
    live_cells: np.ndarray = field(repr=False)

    @property
    def spacing(self):
        return (self.xs[1] - self.xs[0], self.ys[1] - self.ys[0])

    @property
    def n(self):
        return int(self.active_mask.sum())

    @property
    def n_nodes(self):
        return self.nx * self.ny

    @property
    def free_mask(self):
        return self.active_mask & ~self.boundary_mask

    def node_index(self, i, j):
        return j * self.nx + i

    def cell_nodes(self):
        """Global node ids of every cell, counter-clockwise from the lower-left corner."""
        i, j = np.meshgrid(np.arange(self.nx - 1), np.arange(self.ny - 1))
        i = i.ravel()
        j = j.ravel()
        k = j * self.nx + i
        return np.stack([k, k + 1, k + 1 + self.nx, k + self.nx], axis=1)

    def locate(self, x):
        """Cell indices ``(i, j)`` and local coordinates ``(s, t)`` in ``[0, 1]``."""
        hx, hy = self.spacing
        s = (x[0] - self.xs[0]) / hx
        t = (x[1] - self.ys[0]) / hy
        i = int(min(max(np.floor(s), 0), self.nx - 2))
        j = int(min(max(np.floor(t), 0), self.ny - 2))
        return i, j, s - i, t - j

    def grid(self, values):
        """Reshape a nodal vector (or ``n_nodes x k`` array) onto the ``(ny, nx)`` grid."""
        values = np.asarray(values)
        return values.reshape((self.ny, self.nx) + values.shape[1:])

    def check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (2,):
            raise ValueError(f"expected a 2-D point, got shape {x.shape}")
        if not self.domain.contains(x):
            raise ValueError(f"point {tuple(x)} is outside the domain or inside an obstacle")
        return x

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "x1", "x2", "active", "boundary"])
            for k, (x1, x2) in enumerate(self.nodes):
                w.writerow([k, repr(float(x1)), repr(float(x2)), int(self.active_mask[k]), int(self.boundary_mask[k])])


def build_mesh(domain, nx, ny):
    """Structured grid over ``domain`` with obstacle nodes deactivated.

    A node strictly inside an obstacle is inactive. A cell overlapping an
    obstacle with positive area is dropped, and the active nodes of dropped
    cells join the outer-boundary nodes in the Dirichlet set.
    """
    if nx < 3 or ny < 3:
        raise ValueError(f"need at least 3 nodes per axis, got nx={nx}, ny={ny}")
    if domain.bounding_box.area <= 0:
        raise ValueError("degenerate domain")
    xs = np.linspace(domain.lower[0], domain.upper[0], nx)
    ys = np.linspace(domain.lower[1], domain.upper[1], ny)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    scale = max(domain.upper[0] - domain.lower[0], domain.upper[1] - domain.lower[1])
    tol = 1e-10 * scale
    active = np.ones(nx * ny, dtype=bool)
    for o in domain.obstacles:
        inside = (
            (nodes[:, 0] > o.lower[0] + tol) & (nodes[:, 0] < o.upper[0] - tol)
            & (nodes[:, 1] > o.lower[1] + tol) & (nodes[:, 1] < o.upper[1] - tol)
        )
        active &= ~inside

    ci, cj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    ci = ci.ravel()
    cj = cj.ravel()
    live = np.ones(ci.size, dtype=bool)
    for o in domain.obstacles:
        ox = np.minimum(xs[ci + 1], o.upper[0]) - np.maximum(xs[ci], o.lower[0])
        oy = np.minimum(ys[cj + 1], o.upper[1]) - np.maximum(ys[cj], o.lower[1])
        live &= ~((ox > tol) & (oy > tol))

    boundary = np.zeros(nx * ny, dtype=bool)
    outer = (np.arange(nx * ny) % nx == 0) | (np.arange(nx * ny) % nx == nx - 1)
    outer |= (np.arange(nx * ny) // nx == 0) | (np.arange(nx * ny) // nx == ny - 1)
    boundary |= outer
    k = cj * nx + ci
    corners = np.stack([k, k + 1, k + 1 + nx, k + nx], axis=1)
    boundary[corners[~live].ravel()] = True
    boundary &= active

    return Mesh(
        domain=domain, nx=nx, ny=ny, xs=xs, ys=ys, nodes=nodes,
        active_mask=active, boundary_mask=boundary, live_cells=live,
    )


def indicator(mesh, points, radius):
    """Nodal indicator ``chi_E``: 1 at active nodes within ``radius`` of a point."""
    chi = np.zeros(mesh.n_nodes)
    for x in points:
        x = mesh.check_point(x)
        d = np.hypot(mesh.nodes[:, 0] - x[0], mesh.nodes[:, 1] - x[1])
        chi[(d <= radius) & mesh.active_mask] = 1.0
    return chi


@dataclass(frozen=True)
class ConvexCover:
    subdomains: tuple

    def containing(self, x):
        return [b for b in self.subdomains if b.contains(x)]

    def largest_containing(self, x):
        """Largest subdomain holding ``x``; ties go to the first listed."""
        found = self.containing(x)
        if not found:
            raise ValueError(f"point {tuple(np.asarray(x))} is not covered")
        return max(found, key=lambda b: b.area)


def decompose_convex(domain):
    """Cover ``domain`` by maximal obstacle-free rectangles on guillotine lines.

    Candidate edges are the outer bounds and every obstacle edge; a candidate
    rectangle survives when it overlaps no obstacle and no other empty
    candidate contains it. Survivors may overlap one another.
    """
    if domain.is_convex:
        return ConvexCover((domain.bounding_box,))
    xs = sorted({domain.lower[0], domain.upper[0]} | {v for o in domain.obstacles for v in (o.lower[0], o.upper[0])})
    ys = sorted({domain.lower[1], domain.upper[1]} | {v for o in domain.obstacles for v in (o.lower[1], o.upper[1])})
    empty = []
    for (x0, x1), (y0, y1) in itertools.product(itertools.combinations(xs, 2), itertools.combinations(ys, 2)):
        r = Box((x0, y0), (x1, y1))
        if not any(r.overlaps_interior(o) for o in domain.obstacles):
            empty.append(r)
    maximal = [r for r in empty if not any(s is not r and s.contains_box(r) and s.area > r.area for s in empty)]
    maximal.sort(key=lambda b: (-b.area, b.lower, b.upper))
    return ConvexCover(tuple(maximal))
