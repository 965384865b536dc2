"""Uniform grid domains, flattening charts, cutoff profiles and dyadic cubes."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import DomainError
from .expr import Expression

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2

__all__ = [
    "GraphChart",
    "GridDomain",
    "CutoffProfile",
    "CubePair",
    "build_grid",
    "cutoff",
    "dyadic_cubes",
    "ball_mask",
]


@dataclass(frozen=True)
class GraphChart:
    """Flattening chart (x', x_n) -> (x', x_n - phi(x')) of a Lipschitz graph domain.

    ``lipschitz`` bounds both the chart and its inverse: the Jacobian is
    unit lower-triangular with off-diagonal row -grad(phi), whose operator
    norm is at most 1 + |grad(phi)|.
    """

    phi: str
    phi_lipschitz: float

    @property
    def lipschitz(self) -> float:
        return 1.0 + float(self.phi_lipschitz)

    def _phi(self, x):
        x = np.asarray(x, dtype=float)
        return Expression(self.phi)(x[..., :-1])

    def forward(self, x):
        x = np.array(x, dtype=float)
        x[..., -1] = x[..., -1] - self._phi(x)
        return x

    def inverse(self, y):
        y = np.array(y, dtype=float)
        y[..., -1] = y[..., -1] + self._phi(y)
        return y


@dataclass(frozen=True, eq=False)
class GridDomain:
    dim: int
    shape: tuple
    spacing: float
    origin: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    descriptor: dict
    chart: GraphChart | None = None
    flat_axis_lower: bool = False

    @property
    def h(self) -> float:
        return self.spacing

    @property
    def interior(self):
        return self.labels == INTERIOR

    @property
    def boundary(self):
        return self.labels == BOUNDARY

    @property
    def exterior(self):
        return self.labels == EXTERIOR

    @property
    def domain(self):
        return self.labels != EXTERIOR

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def strides(self):
        """Flat-index strides for C-ordered vertex arrays."""
        s = [1] * self.dim
        for i in range(self.dim - 2, -1, -1):
            s[i] = s[i + 1] * self.shape[i + 1]
        return tuple(s)

    def coords(self):
        """Vertex coordinates (chart coordinates for graph domains), shape + (n,)."""
        axes = [self.origin[i] + self.spacing * np.arange(self.shape[i]) for i in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def physical_coords(self):
        c = self.coords()
        return c if self.chart is None else self.chart.inverse(c)

    def vertex_coords(self, index):
        return self.origin + self.spacing * np.asarray(index, dtype=float)

    def nearest_vertex(self, x):
        idx = np.rint((np.asarray(x, dtype=float) - self.origin) / self.spacing).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise DomainError(f"point {x} lies off the grid")
        return tuple(int(i) for i in idx)

    @property
    def gamma(self):
        """Flat boundary portion (vertices with x_n on the flat side), if any."""
        if not self.flat_axis_lower:
            return np.zeros(self.shape, dtype=bool)
        m = np.zeros(self.shape, dtype=bool)
        m[..., 0] = True
        return m & self.boundary & self._inside_radius(strict=True)

    def _inside_radius(self, strict=False):
        R = self.descriptor.get("radius")
        if R is None:
            return np.ones(self.shape, dtype=bool)
        c = np.asarray(self.descriptor.get("center", np.zeros(self.dim)), dtype=float)
        r = np.linalg.norm(self.coords() - c, axis=-1)
        tol = 1e-9 * self.spacing
        return r < R - tol if strict else r <= R + tol

    def distance_to_boundary(self, index):
        """Distance from a vertex to the nearest boundary vertex."""
        x = self.vertex_coords(index)
        pts = self.coords()[self.boundary]
        return float(np.min(np.linalg.norm(pts - x, axis=-1)))


def _classify(inside: np.ndarray) -> np.ndarray:
    labels = np.where(inside, INTERIOR, EXTERIOR).astype(np.int8)
    padded = np.pad(inside, 1, constant_values=False)
    n = inside.ndim
    touch = np.zeros_like(inside)
    for ax in range(n):
        for sh in (-1, 1):
            nb = np.roll(padded, sh, axis=ax)[tuple(slice(1, -1) for _ in range(n))]
            touch |= ~nb
    labels[inside & touch] = BOUNDARY
    return labels


def build_grid(descriptor, resolution, spacing) -> GridDomain:
    """Build a uniform grid for ``cube``, ``ball``, ``half_ball`` or ``graph`` domains.

    ``resolution`` is the vertex count per axis (an int, or a tuple for cubes).
    Ball-type grids are centred on the ball centre; half balls keep only the
    layers with x_n >= centre_n, so their last axis has (N + 1) // 2 vertices.
    """
    if isinstance(descriptor, str):
        descriptor = {"kind": descriptor}
    desc = dict(descriptor)
    kind = desc.get("kind", "cube")
    h = float(spacing)
    if not h > 0:
        raise DomainError("spacing must be positive")
    n = int(desc.get("dim", 2))
    res = np.atleast_1d(np.asarray(resolution, dtype=int))
    if res.size == 1:
        res = np.repeat(res, n)
    if res.size != n:
        raise DomainError(f"resolution {tuple(res)} does not match dim {n}")
    desc["dim"] = n
    chart = None
    flat = False

    if kind == "cube":
        origin = np.asarray(desc.get("lower", np.zeros(n)), dtype=float)
        shape = tuple(int(r) for r in res)
        inside = np.ones(shape, dtype=bool)
    elif kind in ("ball", "half_ball", "graph"):
        R = float(desc.get("radius", 1.0))
        c = np.asarray(desc.get("center", np.zeros(n)), dtype=float)
        desc["radius"] = R
        desc["center"] = c.tolist()
        N = int(res[0])
        origin = c - h * (N - 1) / 2.0
        shape = [N] * n
        if kind != "ball":
            flat = True
            origin[-1] = c[-1]
            shape[-1] = (N + 1) // 2
        shape = tuple(shape)
        axes = [origin[i] + h * np.arange(shape[i]) for i in range(n)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        inside = np.linalg.norm(X - c, axis=-1) <= R + 1e-9 * h
        if kind == "graph":
            if "phi" not in desc:
                raise DomainError("graph domain needs 'phi'")
            chart = GraphChart(str(desc["phi"]), float(desc.get("L", 0.0)))
    else:
        raise DomainError(f"unknown domain kind {kind!r}")

    labels = _classify(inside)
    if flat:
        # vertices on x_n = c_n have their lower neighbour outside the half ball
        bottom = labels[..., 0]
        bottom[bottom == INTERIOR] = BOUNDARY
    if not np.any(labels == INTERIOR):
        raise DomainError(f"resolution {tuple(res)} leaves no interior vertex")
    return GridDomain(n, shape, h, origin, labels, desc, chart, flat)


def ball_mask(grid: GridDomain, center, radius, closed=True):
    """Vertices within ``radius`` of ``center`` (a vertex index or coordinates)."""
    c = _center_coords(grid, center)
    r = np.linalg.norm(grid.coords() - c, axis=-1)
    tol = 1e-9 * grid.spacing
    return r <= radius + tol if closed else r < radius - tol


def _center_coords(grid, center):
    center = tuple(center)
    if all(isinstance(i, (int, np.integer)) for i in center):
        return grid.vertex_coords(center)
    return np.asarray(center, dtype=float)


def ball_fits(grid: GridDomain, center, radius, allow_flat=False):
    """True if every lattice point of the closed ball lies in the domain.

    With ``allow_flat`` the ball may leave through the flat side of a half ball.
    """
    c = _center_coords(grid, center)
    lo = np.floor((c - radius - grid.origin) / grid.spacing - 1e-9).astype(int)
    hi = np.ceil((c + radius - grid.origin) / grid.spacing + 1e-9).astype(int)
    shape = np.array(grid.shape)
    ok_lo = lo >= 0
    if allow_flat and grid.flat_axis_lower:
        ok_lo[-1] = True
    if not (np.all(ok_lo) and np.all(hi < shape)):
        # lattice points of the ball outside the grid box
        ranges = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, grid.dim)
        xs = grid.origin + grid.spacing * pts
        inb = np.linalg.norm(xs - c, axis=-1) <= radius + 1e-9 * grid.spacing
        off = np.any(pts < 0, axis=1) | np.any(pts >= shape, axis=1)
        if allow_flat and grid.flat_axis_lower:
            off &= ~(pts[:, -1] < 0)
            off |= np.any(pts[:, :-1] < 0, axis=1) | np.any(pts >= shape, axis=1)
        if np.any(inb & off):
            return False
    return not np.any(ball_mask(grid, c, radius) & grid.exterior)


@dataclass(frozen=True, eq=False)
class CutoffProfile:
    values: np.ndarray = field(repr=False)
    gradient: np.ndarray = field(repr=False)
    grad_bound: float
    constant: float
    floor: float
    annulus: tuple

    @property
    def grad_norm(self):
        return np.linalg.norm(self.gradient, axis=-1)


def central_gradient(grid: GridDomain, f):
    """Central-difference gradient of a vertex field, one-sided at the grid edge."""
    g = np.gradient(np.asarray(f, dtype=float), grid.spacing)
    if grid.dim == 1:
        g = [g]
    return np.stack(g, axis=-1)


def cutoff(grid: GridDomain, center, t, s) -> CutoffProfile:
    """Radial ramp that is 1 on the closed t-ball and 0 outside the s-ball.

    Ramp values that would land within h/(8(s-t)) of 1/2 are pushed to
    1/2 +- h/(4(s-t)), so |1 - 2 eta| >= h/(4(s-t)) on every vertex.
    """
    t, s = float(t), float(s)
    if not t < s:
        raise DomainError(f"cutoff needs t < s, got t={t}, s={s}")
    if t < 0:
        raise DomainError("cutoff radius t must be non-negative")
    if not ball_fits(grid, center, s, allow_flat=True):
        raise DomainError(f"cutoff ball of radius {s} leaves the domain")
    c = _center_coords(grid, center)
    r = np.linalg.norm(grid.coords() - c, axis=-1)
    eta = np.clip((s - r) / (s - t), 0.0, 1.0)
    off = grid.spacing / (4.0 * (s - t))
    near = np.abs(eta - 0.5) < off / 2.0
    eta = np.where(near, 0.5 + np.where(eta < 0.5, -off, off), eta)
    eta = np.where(grid.domain, eta, 0.0)
    grad = central_gradient(grid, eta)
    gnorm = np.linalg.norm(grad, axis=-1)
    gmax = float(np.max(gnorm[grid.domain]))
    floor = float(np.min(np.abs(1.0 - 2.0 * eta[grid.domain])))
    return CutoffProfile(eta, grad, gmax, gmax * (s - t), floor, (t, s, tuple(np.round(c, 12))))


@dataclass(frozen=True)
class CubePair:
    """Concentric cubes Q_R(x0) and Q_2R(x0); ``side`` is R in vertex units."""

    center: tuple
    side: int

    @property
    def inner(self):
        k = self.side // 2
        return tuple(slice(c - k, c + k + 1) for c in self.center)

    @property
    def outer(self):
        k = self.side
        return tuple(slice(c - k, c + k + 1) for c in self.center)


def dyadic_cubes(grid: GridDomain, sides, mask=None, stride=1):
    """All cube pairs (Q_R(x0), Q_2R(x0)) with Q_2R inside ``mask``.

    ``sides`` are side lengths R in vertex units (even integers); centres run
    over every ``stride``-th vertex.  ``mask`` defaults to the domain.
    """
    mask = grid.domain if mask is None else np.asarray(mask, dtype=bool)
    # summed-area table of the mask for O(1) containment tests
    sat = mask.astype(np.int64)
    for ax in range(grid.dim):
        sat = np.cumsum(sat, axis=ax)
    sat = np.pad(sat, [(1, 0)] * grid.dim)
    out = []
    for side in sides:
        side = int(side)
        if side < 2 or side % 2:
            raise DomainError(f"cube side {side} must be an even number of vertex steps")
        k = side
        ranges = [range(k, n - k, stride) for n in grid.shape]
        if any(len(r) == 0 for r in ranges):
            continue
        full = (2 * k + 1) ** grid.dim
        for c in product(*ranges):
            lo = [ci - k for ci in c]
            hi = [ci + k + 1 for ci in c]
            total = 0
            for corner in product((0, 1), repeat=grid.dim):
                idx = tuple(hi[i] if corner[i] else lo[i] for i in range(grid.dim))
                sign = (-1) ** (grid.dim - sum(corner))
                total += sign * sat[idx]
            if total == full:
                out.append(CubePair(tuple(int(x) for x in c), side))
    return out
