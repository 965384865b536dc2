"""Discrete p-harmonic Dirichlet solver, geodesic interpolation and quasi-minimality."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .energy import MetricMap, distance_sq_gradient, distance_field, pullback_trace
from .errors import DomainError, NumericalFailure, SpaceTagMismatchError
from .grid import CutoffProfile, GridDomain, build_grid, central_gradient
from .targets import Euclidean, TargetPoint, TargetSpace, Tree

__all__ = [
    "SolverConfig",
    "QuasiCertificate",
    "CompetitorReport",
    "edge_energy",
    "solve_dirichlet",
    "interpolate_maps",
    "radial_stretch",
    "quasiminimality_ratio",
    "competitor_check",
    "tripod_arc_boundary",
    "constant_grid_ceil",
]

ORDERS = ("redblack", "lexicographic", "shuffled")
LOG_STEP = 1.01


@dataclass(frozen=True)
class SolverConfig:
    """Relaxation settings.

    ``p`` defaults to the domain dimension.  ``tol_step``, when set, replaces
    the relative-energy stopping rule by a bound on the largest vertex move in
    one sweep (useful when the map itself, not just its energy, must converge).
    """

    p: float | None = None
    max_sweeps: int = 20000
    tol_rel_energy: float = 1e-10
    tol_step: float | None = None
    relaxation: str = "full"
    damping: float = 1.0
    order: str = "redblack"
    seed: int = 0
    multilevel: bool = False
    monotone_slack: float = 1e-14

    def __post_init__(self):
        if self.p is not None and not self.p > 1:
            raise DomainError("solver exponent p must exceed 1")
        if not self.tol_rel_energy > 0:
            raise DomainError("tol_rel_energy must be positive")
        if self.tol_step is not None and not self.tol_step > 0:
            raise DomainError("tol_step must be positive")
        if self.relaxation not in ("full", "damped"):
            raise DomainError(f"unknown relaxation {self.relaxation!r}")
        if self.relaxation == "damped" and not 0 < self.damping <= 1:
            raise DomainError("damping factor must lie in (0, 1]")
        if self.order not in ORDERS:
            raise DomainError(f"unknown sweep order {self.order!r}")
        if self.max_sweeps < 1:
            raise DomainError("max_sweeps must be at least 1")

    def exponent(self, grid: GridDomain) -> float:
        return float(grid.dim if self.p is None else self.p)


@dataclass
class QuasiCertificate:
    subdomains: list
    energies_u: list
    energies_v: list
    ratios: list
    deficits: list
    q_hat: float

    def to_dict(self):
        return {
            "subdomain_sizes": [int(np.sum(m)) for m in self.subdomains],
            "energies_u": self.energies_u,
            "energies_v": self.energies_v,
            "ratios": self.ratios,
            "deficits": self.deficits,
            "q_hat": self.q_hat,
        }


@dataclass
class CompetitorReport:
    """Smallest constant (on a 1% log grid) making the trace-form inequality hold."""

    constant: float
    required: float
    tested: int
    violations: int
    boundary: bool
    grid_base: float = LOG_STEP
    fields: dict = field(default_factory=dict, repr=False)

    @property
    def certified(self) -> bool:
        return np.isfinite(self.constant)

    def to_dict(self):
        return {
            "constant": self.constant,
            "required": self.required,
            "tested": self.tested,
            "violations": self.violations,
            "boundary": self.boundary,
            "grid_base": self.grid_base,
        }


def constant_grid_ceil(x: float, base: float = LOG_STEP) -> float:
    """Smallest power of ``base`` that is >= x (0 for x <= 0, inf for inf)."""
    if not x > 0:
        return 0.0
    if not np.isfinite(x):
        return float("inf")
    k = int(np.ceil(np.log(x) / np.log(base) - 1e-12))
    c = base**k
    return c if c >= x else base ** (k + 1)


# ---------------------------------------------------------------------------
# edge energy


def _edges(grid: GridDomain):
    """Per axis: flat indices of lower endpoints of edges inside the domain."""
    dom = grid.domain
    out = []
    for i in range(grid.dim):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[i] = slice(0, -1)
        hi[i] = slice(1, None)
        both = np.zeros(grid.shape, dtype=bool)
        both[tuple(lo)] = dom[tuple(lo)] & dom[tuple(hi)]
        out.append((np.flatnonzero(both), grid.strides[i]))
    return out


def edge_energy(u: MetricMap, p: float | None = None, region=None) -> float:
    """Discrete p-energy sum_e w_e d^p / h^p * h^n over nearest-neighbour edges.

    Edges joining two boundary vertices carry weight 1/2.  With ``region`` only
    edges having at least one endpoint in the region are summed.
    """
    grid = u.grid
    p = float(grid.dim if p is None else p)
    V = u.values.reshape(-1, u.space.payload_dim)
    bnd = grid.boundary.ravel()
    reg = None if region is None else np.asarray(region, dtype=bool).ravel()
    total = 0.0
    for a, s in _edges(grid):
        b = a + s
        if reg is not None:
            keep = reg[a] | reg[b]
            a, b = a[keep], b[keep]
        w = np.where(bnd[a] & bnd[b], 0.5, 1.0)
        total += float(np.sum(w * u.space.dist(V[a], V[b]) ** p))
    return total * grid.spacing ** (grid.dim - p)


# ---------------------------------------------------------------------------
# Dirichlet solver


def _boundary_payload(grid: GridDomain, space: TargetSpace, boundary):
    """Full-grid payload array with the boundary data, plus any values supplied
    off the boundary (NaN where none were given)."""
    k = space.payload_dim
    full = tuple(grid.shape) + (k,)
    if isinstance(boundary, MetricMap):
        if boundary.space.tag != space.tag:
            raise SpaceTagMismatchError(f"boundary map lives in {boundary.space.tag}, not {space.tag}")
        vals = boundary.values
    elif callable(boundary):
        vals = np.asarray(boundary(grid.physical_coords()), dtype=float).reshape(full)
    else:
        vals = np.asarray(boundary, dtype=float)
        if vals.shape == (int(grid.boundary.sum()), k):
            tmp = np.full(full, np.nan)
            tmp[grid.boundary] = vals
            vals = tmp
    if vals.shape != full:
        raise DomainError(f"boundary data of shape {vals.shape} does not fit grid shape {full}")
    if np.any(~np.isfinite(vals[grid.boundary])):
        raise DomainError("boundary data missing at some boundary vertices")
    out = np.full(full, np.nan)
    given = np.all(np.isfinite(vals), axis=-1)
    out[given] = space.normalize(vals[given])
    return out


def _fill_from_boundary(grid: GridDomain, data):
    """Give every vertex the value of its nearest boundary vertex."""
    idx = ndimage.distance_transform_edt(~grid.boundary, return_distances=False, return_indices=True)
    return data[tuple(idx)]


def _coarse_ok(grid: GridDomain):
    kind = grid.descriptor.get("kind", "cube")
    if kind == "cube":
        res = np.array(grid.shape)
    else:
        res = np.array([grid.shape[0]])
    return bool(np.all(res % 2 == 1) and np.all(res >= 9))


def _coarse_grid(grid: GridDomain):
    kind = grid.descriptor.get("kind", "cube")
    if kind == "cube":
        res = tuple((n + 1) // 2 for n in grid.shape)
    else:
        res = (grid.shape[0] + 1) // 2
    return build_grid(grid.descriptor, res, 2 * grid.spacing)


def _prolong(space: TargetSpace, coarse_vals, fine_shape):
    k = coarse_vals.shape[-1]
    out = np.full(tuple(fine_shape) + (k,), np.nan)
    even = tuple(slice(0, None, 2) for _ in fine_shape)
    out[even] = coarse_vals
    n = len(fine_shape)
    for i in range(n):
        sel = [slice(0, None, 2) if j > i else slice(None) for j in range(n)]
        lo, mid, hi = list(sel), list(sel), list(sel)
        lo[i] = slice(0, -2, 2)
        mid[i] = slice(1, -1, 2)
        hi[i] = slice(2, None, 2)
        out[tuple(mid)] = space.geodesic(out[tuple(lo)], out[tuple(hi)], 0.5)
    return out


def _neighbour_offsets(grid):
    offs = []
    for s in grid.strides:
        offs += [s, -s]
    return np.array(offs)


def _relax(space, V, idx, offs, p, cfg):
    """Update the vertices ``idx`` (pairwise non-adjacent) in place; returns max move."""
    if idx.size == 0:
        return 0.0
    old = V[idx]
    nb = V[idx[:, None] + offs[None, :]]
    w = np.ones(nb.shape[:2])
    new = space.weighted_mean(nb, w, power=p, init=old)
    if cfg.relaxation == "damped":
        new = space.geodesic(old, new, cfg.damping)
    new = space.normalize(new)
    f_old = np.sum(space.dist(old[:, None, :], nb) ** p, axis=1)
    f_new = np.sum(space.dist(new[:, None, :], nb) ** p, axis=1)
    ok = f_new <= f_old
    V[idx[ok]] = new[ok]
    moved = space.dist(old[ok], new[ok])
    return float(np.max(moved)) if moved.size else 0.0


def solve_dirichlet(grid: GridDomain, space: TargetSpace, boundary, cfg: SolverConfig | None = None,
                    init=None, free=None) -> MetricMap:
    """Minimise the discrete p-energy with the boundary values held fixed.

    ``boundary`` is a MetricMap, a full-grid payload array, an array with one
    row per boundary vertex, or a callable on physical coordinates.  ``free``
    selects the vertices that move (interior vertices by default); all others
    keep their ``init`` value.  Every vertex update is the weighted Frechet mean
    of its 2n neighbours with power p, accepted only if it does not raise the
    local objective, so the energy is monotone by construction; any observed
    increase raises NumericalFailure.  Energies per sweep are kept in
    ``meta['energies']``.
    """
    cfg = cfg or SolverConfig()
    p = cfg.exponent(grid)
    source = _boundary_payload(grid, space, boundary)
    data = np.where(grid.boundary[..., None], source, np.nan)
    filled = _fill_from_boundary(grid, data)
    if free is None:
        free = grid.interior
    else:
        free = np.asarray(free, dtype=bool)
        if np.any(free & ~grid.interior):
            raise DomainError("free vertices must be interior vertices")

    if init is not None:
        start = np.array(init.values if isinstance(init, MetricMap) else init, dtype=float)
        start[grid.boundary] = data[grid.boundary]
    elif cfg.multilevel and _coarse_ok(grid) and np.array_equal(free, grid.interior):
        cg = _coarse_grid(grid)
        even = tuple(slice(0, None, 2) for _ in grid.shape)
        # coarse boundary vertices take supplied data where the caller gave any
        coarse_data = np.where(np.isfinite(source[even]), source[even], filled[even])
        coarse = solve_dirichlet(cg, space, coarse_data, cfg)
        start = _prolong(space, coarse.values, grid.shape)
        start = np.where(free[..., None], start, filled)
    else:
        start = filled.copy()
    start = np.where(grid.exterior[..., None], filled, start)
    start[grid.boundary] = data[grid.boundary]

    u = MetricMap(grid, space, space.normalize(start))
    V = u.values.reshape(-1, space.payload_dim)
    offs = _neighbour_offsets(grid)
    free_flat = np.flatnonzero(free)
    parity = np.sum(np.indices(grid.shape), axis=0).ravel()[free_flat] % 2
    colours = [free_flat[parity == 0], free_flat[parity == 1]]
    rng = np.random.default_rng(cfg.seed)

    E = edge_energy(u, p)
    energies = [E]
    converged = False
    for sweep in range(cfg.max_sweeps):
        if cfg.order == "redblack":
            step = max(_relax(space, V, c, offs, p, cfg) for c in colours)
        else:
            order = free_flat if cfg.order == "lexicographic" else rng.permutation(free_flat)
            step = 0.0
            for i in order:
                step = max(step, _relax(space, V, np.array([i]), offs, p, cfg))
        E_new = edge_energy(u, p)
        energies.append(E_new)
        if E_new > E + cfg.monotone_slack * max(E, 1e-300):
            u.meta.update(energies=energies, sweeps=sweep + 1, converged=False, p=p)
            raise NumericalFailure(f"energy increased in sweep {sweep + 1}: {E} -> {E_new}", partial=u)
        if cfg.tol_step is not None:
            done = step < cfg.tol_step
        else:
            done = E - E_new <= cfg.tol_rel_energy * E
        E = E_new
        if done:
            converged = True
            break
    u.meta.update(energies=energies, sweeps=len(energies) - 1, converged=converged, p=p)
    if not converged:
        raise NumericalFailure(f"no convergence within {cfg.max_sweeps} sweeps", partial=u)
    return u


# ---------------------------------------------------------------------------
# geodesic interpolation and test maps


def _target_values(u: MetricMap, target):
    if isinstance(target, MetricMap):
        if target.space.tag != u.space.tag:
            raise SpaceTagMismatchError(f"target map lives in {target.space.tag}, not {u.space.tag}")
        if tuple(target.grid.shape) != tuple(u.grid.shape):
            raise DomainError("target map lives on a different grid")
        return target.values
    if isinstance(target, TargetPoint):
        return np.broadcast_to(u.space.check(target), u.values.shape)
    raise DomainError("target must be a TargetPoint or a MetricMap")


def interpolate_maps(u: MetricMap, target, eta) -> MetricMap:
    """Pointwise t-fraction map x -> geodesic(u(x), target(x), eta(x))."""
    tv = _target_values(u, target)
    if isinstance(eta, CutoffProfile):
        t = eta.values
    else:
        t = np.broadcast_to(np.asarray(eta, dtype=float), u.grid.shape)
    if np.any((t < 0) | (t > 1)):
        raise DomainError("interpolation parameter must lie in [0, 1]")
    out = u.space.geodesic(u.values, tv, t)
    out = np.where(u.grid.exterior[..., None], u.values, out)
    return MetricMap(u.grid, u.space, out, {"interpolated": True})


def radial_stretch(grid: GridDomain, K: float) -> MetricMap:
    """u(x) = x |x|^(1/K - 1) into euclidean(n), u(0) = 0."""
    if not K >= 1:
        raise DomainError("stretch factor K must be >= 1")
    X = grid.physical_coords()
    r = np.linalg.norm(X, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, r ** (1.0 / K - 1.0), 0.0)
    return MetricMap(grid, Euclidean(grid.dim), X * scale, {"K": float(K)})


def tripod_arc_boundary(space: Tree, grid: GridDomain, center=None):
    """Boundary data sending three equal arcs of the circle onto the three edges.

    An angle s in arc k maps to edge k at offset proportional to the angular
    distance from s to the nearest arc endpoint, scaled so arc midpoints reach
    the edge tips.  Returns a full-grid payload array.
    """
    if len(space.edges) != 3 or not space.is_star:
        raise DomainError("tripod boundary data needs a three-edge star tree")
    c = np.zeros(grid.dim) if center is None else np.asarray(center, dtype=float)
    X = grid.physical_coords() - c
    theta = np.mod(np.arctan2(X[..., 1], X[..., 0]), 2 * np.pi)
    arc = 2 * np.pi / 3
    k = np.minimum((theta // arc).astype(int), 2)
    local = theta - k * arc
    frac = np.minimum(local, arc - local) / (arc / 2)
    off = frac * space.lengths[k]
    return np.stack([k.astype(float), off], axis=-1)


# ---------------------------------------------------------------------------
# quasi-minimality


def quasiminimality_ratio(u: MetricMap, p: float | None, subdomains, cfg: SolverConfig | None = None
                          ) -> QuasiCertificate:
    """Energy of u over each subdomain divided by that of the re-solved competitor.

    Each subdomain is a vertex mask of interior vertices; the competitor keeps
    u outside it and minimises the energy of the edges touching it.  A 0/0
    ratio is 1; ratios below 1 are reported as 1 with the deficit recorded.
    """
    grid = u.grid
    cfg = cfg or SolverConfig()
    p = float(grid.dim if p is None else p)
    cfg = replace(cfg, p=p, multilevel=False)
    masks, Eu, Ev, ratios, deficits = [], [], [], [], []
    for sub in subdomains:
        m = np.asarray(sub, dtype=bool)
        if m.shape != tuple(grid.shape):
            raise DomainError("subdomain mask does not match the grid")
        if np.any(m & ~grid.interior):
            raise DomainError("subdomain touches the boundary or exterior")
        if not np.any(m):
            raise DomainError("empty subdomain")
        v = solve_dirichlet(grid, u.space, u.values, cfg, init=u, free=m)
        e_u = edge_energy(u, p, region=m)
        e_v = edge_energy(v, p, region=m)
        if e_v <= 0.0:
            r = 1.0 if e_u <= 0.0 else float("inf")
        else:
            r = e_u / e_v
        masks.append(m)
        Eu.append(e_u)
        Ev.append(e_v)
        deficits.append(max(0.0, 1.0 - r))
        ratios.append(max(r, 1.0))
    return QuasiCertificate(masks, Eu, Ev, ratios, deficits, float(max(ratios)))


# ---------------------------------------------------------------------------
# competitor inequality in trace form


def competitor_check(u: MetricMap, target, eta: CutoffProfile, rel_tol: float = 1e-9) -> CompetitorReport:
    """Smallest constant C for which, at every vertex where it is measurable,

        |grad u_eta|^2 <= (1 - eta)|grad u|^2 [+ eta |grad h|^2]
                          + C |grad eta| d (|grad u|_1 [+ |grad h|_1])
                          - grad eta . grad d^2 + C |grad eta|^2 d^2 / (1 - 2 eta)^2

    with u_eta the t-fraction map toward ``target`` and d the distance to it,
    maximised over the vertex and its 2n neighbours.
    A MetricMap target switches on the bracketed boundary terms.  Squared
    gradients are nearest-neighbour pullback traces and |grad .|_1 their roots.
    """
    grid = u.grid
    boundary = isinstance(target, MetricMap)
    ue = interpolate_maps(u, target, eta)
    Pu = pullback_trace(u)
    Pe = pullback_trace(ue)
    mask = Pu.mask & Pe.mask
    base = (1.0 - eta.values) * Pu.values
    mixed = np.sqrt(Pu.values)
    if boundary:
        Ph = pullback_trace(target)
        mask &= Ph.mask
        base = base + eta.values * Ph.values
        mixed = mixed + np.sqrt(Ph.values)
    # d enters next to stencil gradients, so take it over the same stencil
    d0 = np.where(grid.domain, distance_field(u, target).values, 0.0)
    d = ndimage.maximum_filter(d0, footprint=ndimage.generate_binary_structure(grid.dim, 1), mode="nearest")
    grad_d2 = distance_sq_gradient(u, target)
    geta = eta.gradient
    gnorm = np.linalg.norm(geta, axis=-1)
    base = base - np.sum(geta * grad_d2, axis=-1)
    q = gnorm**2 * d**2 / (1.0 - 2.0 * eta.values) ** 2
    extra = gnorm * d * mixed + q
    lhs = Pe.values
    scale = max(1.0, float(np.max(np.abs(lhs[mask]))) if np.any(mask) else 1.0)
    excess = (lhs - base)[mask]
    ex = extra[mask]
    tol = rel_tol * scale
    bad = excess > tol
    need = np.zeros_like(excess)
    pos = bad & (ex > 0)
    need[pos] = (excess[pos] - tol) / ex[pos]
    hopeless = bad & (ex <= 0)
    required = float("inf") if np.any(hopeless) else float(np.max(need, initial=0.0))
    C = constant_grid_ceil(required)
    return CompetitorReport(
        constant=C,
        required=required,
        tested=int(mask.sum()),
        violations=int(hopeless.sum()),
        boundary=boundary,
        fields={"lhs": lhs, "base": base, "extra": extra, "q": q, "mask": mask},
    )
