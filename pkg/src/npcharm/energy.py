"""Korevaar-Schoen energy densities, directional energies and distance fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import lcm

import numpy as np
from scipy import integrate, ndimage

from .errors import DomainError, ResolutionError, SpaceTagMismatchError
from .grid import GridDomain, central_gradient
from .targets import TargetPoint, TargetSpace

__all__ = [
    "MetricMap",
    "EnergyField",
    "normalization_constant",
    "ball_offsets",
    "approx_density",
    "gradient_density",
    "directional_energy",
    "pullback_tensor",
    "pullback_trace",
    "parallelogram_residual",
    "distance_field",
    "distance_sq_gradient",
    "total_energy",
    "quadrature_weights",
]

DEFAULT_LADDER = (4, 6, 8)


@dataclass(eq=False)
class MetricMap:
    """Target point per grid vertex; ``values`` has shape grid.shape + (k,)."""

    grid: GridDomain
    space: TargetSpace
    values: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        want = tuple(self.grid.shape) + (self.space.payload_dim,)
        if self.values.shape != want:
            raise DomainError(f"map values have shape {self.values.shape}, expected {want}")

    @classmethod
    def from_function(cls, grid, space, fn, physical=True):
        X = grid.physical_coords() if physical else grid.coords()
        vals = np.asarray(fn(X), dtype=float).reshape(tuple(grid.shape) + (space.payload_dim,))
        return cls(grid, space, space.normalize(vals))

    @classmethod
    def constant(cls, grid, space, point: TargetPoint):
        p = space.check(point)
        return cls(grid, space, np.broadcast_to(p, tuple(grid.shape) + p.shape).copy())

    def at(self, index) -> TargetPoint:
        return self.space.wrap(self.values[tuple(index)])

    def trace(self):
        """Payloads on the boundary vertices (in C order)."""
        return self.values[self.grid.boundary]

    def copy(self):
        return MetricMap(self.grid, self.space, self.values.copy(), dict(self.meta))


@dataclass(eq=False)
class EnergyField:
    """Scalar vertex field with a mask of vertices where it is defined."""

    grid: GridDomain
    values: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.where(self.mask, self.values, 0.0)

    def integral(self, region=None):
        region = self.mask if region is None else np.asarray(region, dtype=bool)
        if np.any(region & ~self.mask):
            raise DomainError("region extends outside the defined part of the field")
        return float(np.sum(self.values[region])) * self.grid.spacing**self.grid.dim

    def mean(self, region):
        region = np.asarray(region, dtype=bool)
        if np.any(region & ~self.mask):
            raise DomainError("region extends outside the defined part of the field")
        return float(np.mean(self.values[region]))

    def map(self, fn, **meta):
        return EnergyField(self.grid, fn(self.values), self.mask.copy(), {**self.meta, **meta})


def _unit_ball_moment(n, p):
    # average of |z_1|^p over the unit n-ball: slices at height z have volume ~ (1 - z^2)^((n-1)/2)
    num = integrate.quad(lambda z: abs(z) ** p * (1 - z * z) ** ((n - 1) / 2), -1, 1, limit=200)[0]
    den = integrate.quad(lambda z: (1 - z * z) ** ((n - 1) / 2), -1, 1, limit=200)[0]
    return num / den


@lru_cache(maxsize=None)
def normalization_constant(n: int, p: float) -> float:
    """Continuum c(n, p) making unit-gradient linear maps have density 1."""
    return 1.0 / _unit_ball_moment(int(n), float(p))


@lru_cache(maxsize=None)
def ball_offsets(n: int, radius_steps: float):
    """Integer offsets k with |k| <= radius_steps (closed lattice ball)."""
    m = int(np.floor(radius_steps + 1e-9))
    r = np.arange(-m, m + 1)
    K = np.stack(np.meshgrid(*[r] * n, indexing="ij"), axis=-1).reshape(-1, n)
    keep = np.sum(K * K, axis=1) <= radius_steps**2 * (1 + 1e-12)
    K = K[keep]
    K.setflags(write=False)
    return K


def _lattice_constant(n, radius_steps, p):
    # exact normalisation on the lattice ball; see approx_density
    K = ball_offsets(n, radius_steps)
    return 1.0 / float(np.mean(np.abs(K[:, 0] / radius_steps) ** p))


def _offset_support(grid: GridDomain, K):
    fp_shape = tuple(2 * int(np.max(np.abs(K[:, i]))) + 1 for i in range(grid.dim))
    foot = np.zeros(fp_shape, dtype=bool)
    ctr = np.array(fp_shape) // 2
    foot[tuple((K + ctr).T)] = True
    return ndimage.binary_erosion(grid.domain, structure=foot, border_value=0)


def _flat(u: MetricMap):
    return u.values.reshape(-1, u.space.payload_dim)


def _flat_offset(grid, k):
    return int(np.dot(k, grid.strides))


def approx_density(u: MetricMap, p: float, eps: float, where=None) -> EnergyField:
    """Normalised ball average of d^p(u(x), u(y)) / eps^p over the closed eps-ball.

    Zero on the collar where the ball leaves the domain.  The normalisation is
    the reciprocal of the lattice-ball average of |z_1|^p, which makes every
    unit-gradient linear map have density exactly 1 on the lattice; the
    continuum constant c(n, p) is recorded in ``meta`` for reference.
    """
    grid = u.grid
    if p <= 1:
        raise DomainError("energy exponent p must exceed 1")
    m = eps / grid.spacing
    if m < 2 - 1e-9:
        raise ResolutionError(f"eps={eps} is below two grid steps (h={grid.spacing})")
    K = ball_offsets(grid.dim, float(m))
    mask = _offset_support(grid, K)
    if where is not None:
        mask &= np.asarray(where, dtype=bool)
    idx = np.flatnonzero(mask)
    V = _flat(u)
    acc = np.zeros(idx.size)
    base = V[idx]
    for k in K:
        off = _flat_offset(grid, k)
        if off == 0:
            continue
        acc += u.space.dist(base, V[idx + off]) ** p
    lat = _lattice_constant(grid.dim, float(m), p)
    vals = np.zeros(grid.size)
    vals[idx] = lat * acc / len(K) / eps**p
    meta = {
        "kind": "approx_density",
        "p": float(p),
        "eps": float(eps),
        "normalization": lat,
        "continuum_normalization": normalization_constant(grid.dim, float(p)),
        "ball_size": int(len(K)),
    }
    return EnergyField(grid, vals.reshape(grid.shape), mask, meta)


def gradient_density(u: MetricMap, p: float, ladder=DEFAULT_LADDER, where=None) -> EnergyField:
    """Energy density |grad u|_p from a linear fit in eps over an eps-ladder.

    ``ladder`` lists the radii in grid steps; the intercept of the per-vertex
    least-squares line through the approximate densities is reported, clipped
    at zero.
    """
    grid = u.grid
    ladder = tuple(float(l) for l in ladder)
    if len(ladder) < 2:
        raise ResolutionError("eps-ladder needs at least two radii")
    K = ball_offsets(grid.dim, max(ladder))
    mask = _offset_support(grid, K)
    if where is not None:
        mask &= np.asarray(where, dtype=bool)
    if not np.any(mask):
        raise ResolutionError(f"grid too small for the eps-ladder {ladder}")
    eps = np.array(ladder) * grid.spacing
    fields = [approx_density(u, p, e, where=mask).values for e in eps]
    # intercept weights of the least-squares line through (eps_j, e_j)
    x = eps
    denom = len(x) * np.sum(x * x) - np.sum(x) ** 2
    wts = (np.sum(x * x) - x * np.sum(x)) / denom
    vals = sum(w * f for w, f in zip(wts, fields))
    vals = np.maximum(vals, 0.0)
    meta = {"kind": "gradient_density", "p": float(p), "ladder": list(ladder), "eps": eps.tolist()}
    return EnergyField(grid, vals, mask, meta)


def _lattice_step(grid, Z):
    """Integer offset k and step sigma with sigma * Z = k * h."""
    fr = [Fraction(float(z)).limit_denominator(1000) for z in Z]
    q = 1
    for f in fr:
        q = lcm(q, f.denominator)
    k = np.array([int(f * q) for f in fr])
    return k, q * grid.spacing


def _shift_sq(u, k, sigma):
    """Symmetric average of squared one-sided quotients along offset k."""
    grid = u.grid
    kk = np.abs(k)
    sl = tuple(slice(int(a), n - int(a)) for a, n in zip(kk, grid.shape))
    mask = np.zeros(grid.shape, dtype=bool)
    mask[sl] = True
    if np.any(k):
        mask &= np.roll(grid.domain, tuple(-k), axis=tuple(range(grid.dim)))
        mask &= np.roll(grid.domain, tuple(k), axis=tuple(range(grid.dim)))
    mask &= grid.domain
    idx = np.flatnonzero(mask)
    vals = np.zeros(grid.size)
    if np.any(k):
        V = _flat(u)
        off = _flat_offset(grid, k)
        fwd = u.space.dist(V[idx], V[idx + off]) ** 2
        bwd = u.space.dist(V[idx], V[idx - off]) ** 2
        vals[idx] = 0.5 * (fwd + bwd) / sigma**2
    return vals.reshape(grid.shape), mask


def directional_energy(u: MetricMap, Z) -> EnergyField:
    """Directional energy |u_*(Z)|^2.

    A constant rational ``Z`` is evaluated on the lattice with the smallest step
    sigma making sigma*Z a lattice vector.  A per-vertex field (shape
    grid.shape + (n,)) is contracted against the coordinate pullback tensor.
    """
    grid = u.grid
    Z = np.asarray(Z, dtype=float)
    if Z.shape == (grid.dim,):
        k, sigma = _lattice_step(grid, Z)
        vals, mask = _shift_sq(u, k, sigma)
        return EnergyField(grid, vals, mask, {"kind": "directional_energy", "Z": Z.tolist(), "step": sigma})
    if Z.shape != tuple(grid.shape) + (grid.dim,):
        raise DomainError(f"vector field shape {Z.shape} does not match the grid")
    pi = _coordinate_tensor(u)
    vals = np.einsum("...i,...ij,...j->...", Z, pi["values"], Z)
    return EnergyField(grid, vals, pi["mask"], {"kind": "directional_energy", "Z": "field"})


def _coordinate_tensor(u):
    n = u.grid.dim
    eye = np.eye(n)
    P = np.zeros(tuple(u.grid.shape) + (n, n))
    mask = u.grid.domain.copy()
    for i in range(n):
        for j in range(i, n):
            f = pullback_tensor(u, eye[i], eye[j])
            P[..., i, j] = P[..., j, i] = f.values
            mask &= f.mask
    return {"values": P, "mask": mask}


def pullback_tensor(u: MetricMap, Z, W) -> EnergyField:
    """pi(Z, W) = |u_*(Z+W)|^2 / 4 - |u_*(Z-W)|^2 / 4 (may be negative)."""
    Z = np.asarray(Z, dtype=float)
    W = np.asarray(W, dtype=float)
    a = directional_energy(u, Z + W)
    b = directional_energy(u, Z - W)
    mask = a.mask & b.mask
    return EnergyField(
        u.grid, 0.25 * a.values - 0.25 * b.values, mask, {"kind": "pullback_tensor", "signed": True}
    )


def pullback_trace(u: MetricMap) -> EnergyField:
    """Trace of the pullback tensor, sum_i |u_*(e_i)|^2 (nearest-neighbour |grad u|^2)."""
    grid = u.grid
    total = np.zeros(grid.shape)
    mask = grid.domain.copy()
    for i in range(grid.dim):
        f = directional_energy(u, np.eye(grid.dim)[i])
        total += f.values
        mask &= f.mask
    return EnergyField(grid, total, mask, {"kind": "pullback_trace"})


def parallelogram_residual(u: MetricMap, Z, W) -> EnergyField:
    """|  |u_*(Z+W)|^2 + |u_*(Z-W)|^2 - 2|u_*(Z)|^2 - 2|u_*(W)|^2  | per vertex."""
    Z = np.asarray(Z, dtype=float)
    W = np.asarray(W, dtype=float)
    parts = [directional_energy(u, V) for V in (Z + W, Z - W, Z, W)]
    mask = np.logical_and.reduce([f.mask for f in parts])
    a, b, c, d = (f.values for f in parts)
    return EnergyField(u.grid, np.abs(a + b - 2 * c - 2 * d), mask, {"kind": "parallelogram_residual"})


def _ref_values(u: MetricMap, ref):
    if isinstance(ref, MetricMap):
        if ref.space.tag != u.space.tag:
            raise SpaceTagMismatchError(f"reference map lives in {ref.space.tag}, not {u.space.tag}")
        if tuple(ref.grid.shape) != tuple(u.grid.shape):
            raise DomainError("reference map is defined on a different grid")
        return ref.values
    return u.space.check(ref)


def distance_field(u: MetricMap, ref) -> EnergyField:
    """d(u(x), p0) for a point ``ref`` or d(u(x), h(x)) for a map ``ref``."""
    r = _ref_values(u, ref)
    vals = u.space.dist(u.values, r)
    return EnergyField(u.grid, vals, u.grid.domain.copy(), {"kind": "distance_field"})


def distance_sq_gradient(u: MetricMap, ref):
    """Central-difference gradient of d^2(u, ref), shape grid.shape + (n,)."""
    d = distance_field(u, ref).values
    return central_gradient(u.grid, d**2)


def quadrature_weights(grid: GridDomain):
    """Trapezoid weights: 2^-k at a domain vertex missing a neighbour along k axes."""
    dom = grid.domain
    w = np.where(dom, 1.0, 0.0)
    pad = np.pad(dom, 1, constant_values=False)
    inner = tuple(slice(1, -1) for _ in range(grid.dim))
    for ax in range(grid.dim):
        lo = np.roll(pad, 1, axis=ax)[inner]
        hi = np.roll(pad, -1, axis=ax)[inner]
        w = np.where(dom & ~(lo & hi), 0.5 * w, w)
    return w


def total_energy(u: MetricMap, p: float, region=None, density: EnergyField | None = None) -> float:
    """Integral of |grad u|_p.

    With ``region`` the h^n-weighted sum over that vertex set (which must lie
    where the density is defined).  Without it the whole domain is covered:
    the density is extended into the boundary collar from the nearest vertex
    where it is defined and integrated with trapezoid weights.
    """
    if density is None:
        density = gradient_density(u, p)
    if region is not None:
        return density.integral(region)
    grid = u.grid
    _, idx = ndimage.distance_transform_edt(~density.mask, return_indices=True)
    ext = density.values[tuple(idx)]
    return float(np.sum(quadrature_weights(grid) * ext)) * grid.spacing**grid.dim
