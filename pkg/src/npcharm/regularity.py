"""Numerical checks of the regularity estimates: Hoelder fits, hole-filling,
reverse Hoelder / Gehring, Sobolev-Poincare and the half-ball estimate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyField, MetricMap, distance_field, gradient_density, pullback_trace
from .errors import DomainError, ResolutionError
from .grid import CubePair, GridDomain, ball_fits, ball_mask, cutoff
from .solver import LOG_STEP, constant_grid_ceil
from .targets import TargetPoint

__all__ = [
    "HolderFit",
    "BallPair",
    "CaccioppoliReport",
    "ReverseHolderCertificate",
    "GehringReport",
    "PoincareReport",
    "BoundaryCertificate",
    "max_pairwise_distance",
    "default_radii",
    "holder_exponent",
    "center_of_mass",
    "caccioppoli_check",
    "caccioppoli_search",
    "reverse_holder_check",
    "gehring_gain",
    "sobolev_poincare_constant",
    "boundary_rhi_check",
]

THETA_GRID = tuple(k / 10 for k in range(10))
B_FLOOR = 1.0 + 1e-12


# ---------------------------------------------------------------------------
# Hoelder exponent


@dataclass
class HolderFit:
    center: tuple
    radii: list
    oscillation: list
    alpha: float
    r2: float
    constant_map: bool = False
    boundary: bool = False

    def to_dict(self):
        return {
            "center": list(self.center),
            "radii": self.radii,
            "oscillation": self.oscillation,
            "alpha": self.alpha if np.isfinite(self.alpha) else "inf",
            "r2": self.r2,
            "constant_map": self.constant_map,
            "boundary": self.boundary,
        }


def max_pairwise_distance(space, pts, chunk=512):
    """Exact max_{i,j} d(pts_i, pts_j) by blocked brute force."""
    pts = np.asarray(pts, dtype=float)
    best = 0.0
    for i in range(0, len(pts), chunk):
        a = pts[i : i + chunk]
        # only pairs (i, j) with j >= block start are needed
        b = pts[i:]
        d = space.dist(a[:, None, :], b[None, :, :])
        best = max(best, float(np.max(d)))
    return best


def _distance_to_rim(grid: GridDomain, index, boundary):
    x = grid.vertex_coords(index)
    rim = grid.boundary & ~grid.gamma if boundary else grid.boundary
    pts = grid.coords()[rim]
    return float(np.min(np.linalg.norm(pts - x, axis=-1)))


def default_radii(grid: GridDomain, center, boundary=False, levels=5):
    """r_k = r0 2^-k (k < levels), r0 a quarter of the distance to the boundary,
    keeping radii >= 3h.  Near a flat side only the curved rim counts."""
    r0 = 0.25 * _distance_to_rim(grid, center, boundary)
    radii = [r0 * 2.0**-k for k in range(levels)]
    return [r for r in radii if r >= 3 * grid.spacing * (1 - 1e-12)]


def holder_exponent(u: MetricMap, center, radii=None, boundary=False) -> HolderFit:
    """Log-log least-squares slope of the ball oscillation against the radius.

    With ``boundary`` the balls are intersected with the half-ball domain.
    A map with zero oscillation at some radius gets alpha = inf and a flag.
    """
    grid = u.grid
    center = tuple(int(i) for i in center)
    if radii is None:
        radii = default_radii(grid, center, boundary)
    radii = sorted((float(r) for r in radii), reverse=True)
    if len(radii) < 4:
        raise ResolutionError(f"need at least 4 radii, got {len(radii)}")
    if len(set(radii)) != len(radii):
        raise DomainError("radii must be distinct")
    if radii[-1] < 3 * grid.spacing * (1 - 1e-12):
        raise ResolutionError(f"smallest radius {radii[-1]} is below 3h")
    osc = []
    for r in radii:
        if not ball_fits(grid, center, r, allow_flat=boundary):
            raise DomainError(f"ball of radius {r} around {center} leaves the domain")
        m = ball_mask(grid, center, r) & grid.domain
        osc.append(max_pairwise_distance(u.space, u.values[m]))
    osc_a = np.array(osc)
    if np.any(osc_a <= 0):
        return HolderFit(center, radii, osc, float("inf"), 1.0, constant_map=True, boundary=boundary)
    x, y = np.log(radii), np.log(osc_a)
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(np.sum(res**2) / tot) if tot > 0 else 1.0
    return HolderFit(center, radii, osc, float(slope), r2, boundary=boundary)


# ---------------------------------------------------------------------------
# centres and the hole-filling inequality


def center_of_mass(u: MetricMap, region, power=None) -> TargetPoint:
    """Frechet mean of u over ``region`` with the given power (default n)."""
    power = float(u.grid.dim if power is None else power)
    pts = u.values[np.asarray(region, dtype=bool)]
    if len(pts) == 0:
        raise DomainError("empty region")
    a = u.space.weighted_mean(pts[None], np.ones((1, len(pts))), power=power)
    return u.space.wrap(u.space.normalize(a[0]))


@dataclass
class CaccioppoliReport:
    theta: float
    C: float
    triples: list
    slack: list
    terms: list
    certified: bool
    C0: float | None = None
    grid_base: float = LOG_STEP

    @property
    def worst_slack(self):
        return float(max(self.slack)) if self.slack else 0.0

    def to_dict(self):
        return {
            "theta": self.theta,
            "C": self.C,
            "C0": self.C0,
            "triples": [list(t) for t in self.triples],
            "slack": self.slack,
            "worst_slack": self.worst_slack,
            "certified": self.certified,
            "grid_base": self.grid_base,
        }


def _caccioppoli_terms(u, p0, center, triples, energy):
    grid = u.grid
    n = grid.dim
    mu = n / 2.0
    dens = pullback_trace(u) if energy is None else energy
    d = distance_field(u, p0).values
    vol = grid.spacing**n
    terms = []
    for t, s, R in triples:
        if not (0 <= t < s <= R):
            raise DomainError(f"radius triple ({t}, {s}, {R}) must satisfy t < s <= R")
        if not ball_fits(grid, center, R):
            raise DomainError(f"ball of radius {R} leaves the domain")
        Bt = ball_mask(grid, center, t)
        Bs = ball_mask(grid, center, s)
        BR = ball_mask(grid, center, R)
        if np.any(BR & ~dens.mask):
            raise DomainError(f"energy density undefined inside the ball of radius {R}")
        eta = cutoff(grid, center, t, s)
        g = (eta.grad_norm**2 * d**2 / (1.0 - 2.0 * eta.values) ** 2) ** mu
        e_mu = dens.values**mu
        lhs = float(np.sum(e_mu[Bt])) * vol
        hole = float(np.sum(e_mu[Bs])) * vol
        dist_term = float(np.sum(d[Bs] ** n)) * vol / (s - t) ** n
        g_term = float(np.sum(g[BR])) * vol
        terms.append({"lhs": lhs, "outer": hole, "distance": dist_term, "g": g_term})
    return terms


def caccioppoli_check(u: MetricMap, p0: TargetPoint, center, radius_triples, theta, C,
                      energy: EnergyField | None = None, rel_tol=1e-12) -> CaccioppoliReport:
    """Evaluate int_{B_t} e^mu <= theta int_{B_s} e^mu + C {(s-t)^-n int_{B_s} d^n + int_{B_R} g}.

    ``e`` is the nearest-neighbour |grad u|^2 unless ``energy`` is given,
    mu = n/2, d = d(u, p0) and g = Q(eta, grad eta)^mu for the cutoff between
    t and s.  Slack is LHS - RHS (positive means violated).
    """
    triples = [tuple(float(x) for x in tr) for tr in radius_triples]
    terms = _caccioppoli_terms(u, p0, center, triples, energy)
    slack = []
    for T in terms:
        rhs = theta * T["outer"] + C * (T["distance"] + T["g"])
        slack.append(T["lhs"] - rhs)
    scale = max([1.0] + [T["outer"] for T in terms])
    ok = all(s_ <= rel_tol * scale for s_ in slack)
    return CaccioppoliReport(float(theta), float(C), triples, slack, terms, ok)


def caccioppoli_search(u: MetricMap, p0: TargetPoint, center, radius_triples,
                       energy: EnergyField | None = None) -> CaccioppoliReport:
    """Hole-filling search.

    Finds the smallest C0 on a 1% log grid with
    int_{B_t} e^mu <= C0 (int_{B_s \\ B_t} e^mu + K) for every triple, then
    reports theta = C = C0 / (1 + C0) and re-checks the resulting inequality.
    """
    triples = [tuple(float(x) for x in tr) for tr in radius_triples]
    if not triples:
        raise DomainError("no radius triples given")
    terms = _caccioppoli_terms(u, p0, center, triples, energy)
    need = 0.0
    for T in terms:
        denom = T["outer"] - T["lhs"] + T["distance"] + T["g"]
        if T["lhs"] <= 0:
            continue
        need = max(need, T["lhs"] / denom if denom > 0 else float("inf"))
    C0 = constant_grid_ceil(need)
    theta = C0 / (1.0 + C0) if np.isfinite(C0) else 1.0
    C = theta if np.isfinite(C0) else float("inf")
    rep = caccioppoli_check(u, p0, center, triples, theta, C, energy)
    rep.C0 = C0
    rep.certified = rep.certified and theta < 1.0
    return rep


# ---------------------------------------------------------------------------
# reverse Hoelder and Gehring


@dataclass(frozen=True)
class BallPair:
    """Concentric balls B_inner subset B_outer around a vertex or point."""

    center: tuple
    inner_radius: float
    outer_radius: float

    def masks(self, grid):
        return ball_mask(grid, self.center, self.inner_radius), ball_mask(grid, self.center, self.outer_radius)


def _region_masks(grid, pair, restrict=None):
    if isinstance(pair, CubePair):
        a = np.zeros(grid.shape, dtype=bool)
        b = np.zeros(grid.shape, dtype=bool)
        a[pair.inner] = True
        b[pair.outer] = True
    else:
        a, b = pair.masks(grid)
    if restrict is not None:
        a, b = a & restrict, b & restrict
    return a, b


def _rhi_terms(g, f, q, inner, outer):
    """(mean_in g^q, (mean_out g)^q + mean_out f^q, mean_out g^q) on boolean masks."""
    gi, go, fo = g[inner], g[outer], f[outer]
    return (
        float(np.mean(gi**q)),
        float(np.mean(go)) ** q + float(np.mean(fo**q)),
        float(np.mean(go**q)),
    )


def _window_means(arr, half):
    """Means over every full (2 half + 1)^n window, one axis at a time by cumulative sums."""
    w = 2 * half + 1
    out = arr
    for ax in range(arr.ndim):
        c = np.cumsum(out, axis=ax)
        pad = np.zeros_like(np.take(c, [0], axis=ax))
        c = np.concatenate([pad, c], axis=ax)
        n = c.shape[ax]
        out = (np.take(c, range(w, n), axis=ax) - np.take(c, range(0, n - w), axis=ax)) / w
    return out


def _cube_terms(g, f, q, pairs):
    """_rhi_terms for many cube pairs through windowed means."""
    out = np.zeros((len(pairs), 3))
    by_side = {}
    for i, pr in enumerate(pairs):
        by_side.setdefault(pr.side, []).append(i)
    gq, fq = g**q, f**q
    for side, idx in by_side.items():
        k_in, k_out = side // 2, side
        m_in = _window_means(gq, k_in)
        m_g = _window_means(g, k_out)
        m_f = _window_means(fq, k_out)
        m_gq = _window_means(gq, k_out)
        for i in idx:
            c = pairs[i].center
            ci = tuple(x - k_in for x in c)
            co = tuple(x - k_out for x in c)
            out[i] = (m_in[ci], m_g[co] ** q + m_f[co], m_gq[co])
    return out


@dataclass
class ReverseHolderCertificate:
    q: float
    b: float
    theta: float
    pairs: list
    terms: np.ndarray = field(repr=False)
    slack: list = field(repr=False)
    violations: list = field(default_factory=list)
    vacuous: bool = False
    table: dict = field(default_factory=dict)
    grid_base: float = LOG_STEP

    @property
    def worst_slack(self):
        return float(max(self.slack)) if self.slack else 0.0

    @property
    def certified(self):
        return (not self.violations) and np.isfinite(self.b) and self.theta < 1 and self.b > 1

    def to_dict(self):
        return {
            "q": self.q,
            "b": self.b,
            "theta": self.theta,
            "n_pairs": len(self.pairs),
            "worst_slack": self.worst_slack,
            "violations": len(self.violations),
            "vacuous": self.vacuous,
            "certified": bool(self.certified),
            "table": {str(k): v for k, v in self.table.items()},
            "grid_base": self.grid_base,
        }


def _b_ceil(x):
    """Smallest (1 + 1e-12) 1.01^k, k >= 0, that is >= x."""
    if not np.isfinite(x):
        return float("inf")
    if x <= B_FLOOR:
        return B_FLOOR
    k = int(np.ceil(np.log(x / B_FLOOR) / np.log(LOG_STEP) - 1e-12))
    b = B_FLOOR * LOG_STEP**k
    return b if b >= x else B_FLOOR * LOG_STEP ** (k + 1)


def reverse_holder_check(g: EnergyField, f: EnergyField | None, q: float, pairs, b=None, theta=None,
                         rel_tol=1e-12) -> ReverseHolderCertificate:
    """Check mean_in g^q <= b {(mean_out g)^q + mean_out f^q} + theta mean_out g^q.

    ``pairs`` are CubePair or BallPair regions.  With ``b`` and ``theta``
    given the inequality is checked as stated; otherwise b is minimised on a
    1% grid for each theta in {0, 0.1, ..., 0.9} and the smallest theta with
    a finite b is selected (the whole table is kept).
    """
    if not q > 1:
        raise DomainError("reverse Hoelder exponent q must exceed 1")
    grid = g.grid
    gv = np.where(g.mask, g.values, 0.0)
    fv = np.zeros(grid.shape) if f is None else np.where(f.mask, f.values, 0.0)
    defined = g.mask & (np.ones(grid.shape, bool) if f is None else f.mask)
    pairs = list(pairs)
    if not pairs:
        return ReverseHolderCertificate(q, float("nan"), 0.0, [], np.zeros((0, 3)), [], [], vacuous=True)
    cubes = all(isinstance(p_, CubePair) for p_ in pairs)
    for p_ in pairs:
        _, outer = _region_masks(grid, p_) if not cubes else (None, None)
        if cubes:
            if not np.all(defined[p_.outer]) or any(
                s.start < 0 or s.stop > n for s, n in zip(p_.outer, grid.shape)
            ):
                raise DomainError(f"fields undefined on cube pair {p_}")
        elif np.any(outer & ~defined):
            raise DomainError(f"fields undefined on region pair {p_}")
    if cubes:
        terms = _cube_terms(gv, fv, q, pairs)
    else:
        terms = np.array([_rhi_terms(gv, fv, q, *_region_masks(grid, p_)) for p_ in pairs])
    L, M, G = terms.T
    scale = max(1.0, float(np.max(L)))
    tol = rel_tol * scale

    table = {}
    if b is None or theta is None:
        for th in THETA_GRID:
            num = L - th * G
            need = np.where(M > 0, num / np.where(M > 0, M, 1.0), np.where(num > tol, np.inf, 0.0))
            table[th] = _b_ceil(float(np.max(need)))
        finite = [th for th in THETA_GRID if np.isfinite(table[th])]
        theta = finite[0] if finite else THETA_GRID[-1]
        b = table[theta]
    slack = (L - b * M - theta * G).tolist()
    viol = [pairs[i] for i, s in enumerate(slack) if not s <= tol]
    return ReverseHolderCertificate(float(q), float(b), float(theta), pairs, terms, slack, viol, table=table)


@dataclass
class GehringReport:
    q: float
    exponents: list
    p_means: list
    rhs: list
    C: float
    gain: float
    monotone: bool
    holds: list
    C_tight: float = float("nan")
    gain_tight: float = float("nan")

    def to_dict(self):
        return {
            "q": self.q,
            "exponents": self.exponents,
            "p_means": self.p_means,
            "rhs": self.rhs,
            "C": self.C,
            "gain": self.gain,
            "C_tight": self.C_tight,
            "gain_tight": self.gain_tight,
            "monotone": self.monotone,
        }


def largest_centered_cube(mask):
    """Half-width (vertex steps) and centre of the largest cube in ``mask``
    centred at the middle vertex."""
    c = tuple(s // 2 for s in mask.shape)
    k = 0
    while True:
        sl = tuple(slice(ci - k - 1, ci + k + 2) for ci in c)
        if any(ci - k - 1 < 0 or ci + k + 2 > s for ci, s in zip(c, mask.shape)) or not np.all(mask[sl]):
            return c, k
        k += 1


def gehring_gain(g: EnergyField, f: EnergyField | None, q: float, cert: ReverseHolderCertificate,
                 regions=None, step=0.05, span=1.0) -> GehringReport:
    """Sweep p over [q, q + span] and measure the Gehring-type gain.

    On the cube Q (default: largest centred cube inside the field's mask) and
    its concentric half Q_1/2, compares (mean_{Q_1/2} g^p)^(1/p) with
    C {(mean_Q g^q)^(1/q) + (mean_Q f^p)^(1/p)}.  C is the smallest 1.01^k,
    k >= 0, strictly above the ratio at p = q (the grid shared with b); the
    gain is the largest p - q up to which every swept exponent satisfies the
    bound.  ``C_tight``/``gain_tight`` repeat this with k allowed negative.  ``regions`` may give
    (Q, Q_1/2) explicitly as index tuples.
    """
    if not cert.certified:
        raise DomainError("gehring_gain needs a valid reverse Hoelder certificate")
    grid = g.grid
    if regions is None:
        c, k = largest_centered_cube(g.mask if f is None else g.mask & f.mask)
        if k < 2:
            raise ResolutionError("no cube of half-width >= 2 fits inside the field")
        outer = tuple(slice(ci - k, ci + k + 1) for ci in c)
        inner = tuple(slice(ci - k // 2, ci + k // 2 + 1) for ci in c)
    else:
        outer, inner = regions
    gQ, gh = g.values[outer], g.values[inner]
    fQ = np.zeros_like(gQ) if f is None else f.values[outer]
    ps = [round(q + step * j, 10) for j in range(int(round(span / step)) + 1)]
    lhs, rhs = [], []
    base = float(np.mean(gQ**q)) ** (1.0 / q)
    for p in ps:
        lhs.append(float(np.mean(gh**p)) ** (1.0 / p))
        rhs.append(base + float(np.mean(fQ**p)) ** (1.0 / p))
    r0 = lhs[0] / rhs[0] if rhs[0] > 0 else 0.0
    k0 = np.floor(np.log(r0) / np.log(LOG_STEP)) + 1 if r0 > 0 else -np.inf
    C_tight = float(LOG_STEP**k0) if r0 > 0 else 0.0
    C = float(LOG_STEP ** max(k0, 0.0))

    def sweep(const):
        holds = [l_ <= const * r_ for l_, r_ in zip(lhs, rhs)]
        gain = 0.0
        for p, ok in zip(ps, holds):
            if not ok:
                break
            gain = p - q
        return holds, float(round(gain, 10))

    holds, gain = sweep(C)
    _, gain_tight = sweep(C_tight)
    monotone = all(b_ >= a_ * (1 - 1e-12) for a_, b_ in zip(lhs, lhs[1:]))
    return GehringReport(float(q), ps, lhs, rhs, C, gain, monotone, holds, C_tight, gain_tight)


# ---------------------------------------------------------------------------
# Sobolev-Poincare


@dataclass
class PoincareReport:
    p: float
    q: float
    balls: list
    constants: list
    max_constant: float
    regime: str

    def to_dict(self):
        return {
            "p": self.p,
            "q": self.q,
            "balls": [[list(c), r] for c, r in self.balls],
            "constants": self.constants,
            "max_constant": self.max_constant,
            "regime": self.regime,
        }


def sobolev_poincare_constant(u: MetricMap, p: float, q: float, balls, ladder=(4, 6, 8)) -> PoincareReport:
    """Per ball, inf_a (mean_B d^q(u, a))^(1/q) / (diam B (mean_B |grad u|_p)^(1/p)).

    The infimum over centres uses the power-q Frechet mean.  Balls need 4B
    inside the domain.  ``regime`` flags exponents outside 1 < p < n.
    """
    grid = u.grid
    n = grid.dim
    if not p > 1:
        raise DomainError("p must exceed 1")
    if p > n:
        regime = "p>n"
    elif p == n:
        regime = "p=n"
    else:
        regime = "p<n"
        if not q < n * p / (n - p):
            raise DomainError(f"q={q} must be below np/(n-p)={n * p / (n - p)}")
    balls = [(tuple(int(i) for i in c), float(r)) for c, r in balls]
    masks = []
    for c, r in balls:
        if not ball_fits(grid, c, 4 * r):
            raise DomainError(f"4B for ball ({c}, {r}) leaves the domain")
        masks.append(ball_mask(grid, c, r))
    where = np.any(masks, axis=0)
    dens = gradient_density(u, p, ladder, where=where)
    if np.any(where & ~dens.mask):
        raise ResolutionError(f"eps-ladder {tuple(ladder)} does not fit around the balls at h={grid.spacing}")
    consts = []
    for (c, r), m in zip(balls, masks):
        pts = u.values[m]
        a = u.space.weighted_mean(pts[None], np.ones((1, len(pts))), power=q)
        num = float(np.mean(u.space.dist(pts, a) ** q)) ** (1.0 / q)
        den = 2 * r * dens.mean(m) ** (1.0 / p)
        consts.append(num / den if den > 0 else 0.0)
    return PoincareReport(float(p), float(q), balls, consts, float(max(consts)), regime)


# ---------------------------------------------------------------------------
# boundary estimate on half balls


@dataclass
class BoundaryCertificate:
    c: float
    pairs: list
    branches: list
    terms: list
    required: list
    p_tilde: float
    q_hat: float
    grid_base: float = LOG_STEP

    @property
    def certified(self):
        return bool(np.isfinite(self.c))

    @property
    def worst_slack(self):
        return float(max(r - self.c for r in self.required)) if self.required else 0.0

    def to_dict(self):
        return {
            "c": self.c,
            "n_pairs": len(self.pairs),
            "n_boundary_branch": sum(b == "boundary" for b in self.branches),
            "n_interior_branch": sum(b == "interior" for b in self.branches),
            "required": self.required,
            "worst_slack": self.worst_slack,
            "p_tilde": self.p_tilde,
            "q_hat": self.q_hat,
            "certified": self.certified,
        }


def _extend_by_h(u: MetricMap, h_map: MetricMap):
    """Glue u on the half-ball grid into h on the concentric full-ball grid."""
    G, g = h_map.grid, u.grid
    if h_map.space.tag != u.space.tag:
        raise DomainError("u and h live in different target spaces")
    if G.spacing != g.spacing or G.shape[:-1] != g.shape[:-1] or G.shape[-1] != 2 * g.shape[-1] - 1:
        raise DomainError("h must live on the full-ball grid whose upper half is u's grid")
    off = g.shape[-1] - 1
    ext = h_map.values.copy()
    ext[..., off:, :] = np.where(g.domain[..., None], u.values, ext[..., off:, :])
    return MetricMap(G, u.space, ext), off


def boundary_rhi_check(u: MetricMap, h_map: MetricMap, p: float, centers, radii, q_hat=None,
                       p_tilde=None, trace_tol=1e-12) -> BoundaryCertificate:
    """Half-ball mean-value estimate near the flat boundary Gamma.

    ``u`` lives on a half-ball grid; ``h_map`` on the full-ball grid whose upper
    half is u's grid, and u is extended by h below Gamma.  For a centre x with
    x_n <= 3r/4 the required constant is

        (mean_{B_r/2 ∩ B+} |grad u|_pt)^(1/pt)
            / [(mean_{B_r ∩ B+} |grad u|_n)^(1/n) + mean_{B_r ∩ B+} (|grad h|_p + g)],

    with g = Q(eta, grad eta)^(n/2) for the cutoff between r/2 and r toward h.
    Deeper centres use the interior reverse Hoelder form on (B_r/2, B_3r/4)
    for w = (|grad u|^2)^(q_hat/2) with exponent n/q_hat and f = g^(q_hat/n),
    through the same code as reverse_holder_check.
    """
    g0 = u.grid
    n = g0.dim
    if not g0.flat_axis_lower:
        raise DomainError("u must live on a half-ball grid")
    if not p > n:
        raise DomainError("h must have finite p-energy for some p > n")
    p_tilde = 0.5 * (n + p) if p_tilde is None else float(p_tilde)
    q_hat = 0.75 * n if q_hat is None else float(q_hat)
    U, off = _extend_by_h(u, h_map)
    G = U.grid
    trace = distance_field(U, h_map).values[..., off:][g0.boundary]
    if np.any(trace > trace_tol):
        raise DomainError(f"trace of u differs from h by up to {float(np.max(trace))}")
    upper = np.zeros(G.shape, dtype=bool)
    upper[..., off:] = g0.domain

    pairs = []
    for c in centers:
        for r in radii:
            pairs.append((tuple(int(i) for i in c), float(r)))
    needed_where = np.zeros(G.shape, dtype=bool)
    for c, r in pairs:
        cG = c[:-1] + (c[-1] + off,)
        if not ball_fits(G, cG, r):
            raise DomainError(f"ball ({c}, {r}) leaves the extended grid")
        needed_where |= ball_mask(G, cG, r)
    du_pt = gradient_density(U, p_tilde, where=needed_where)
    du_n = gradient_density(U, n, where=needed_where)
    dh_p = gradient_density(h_map, p, where=needed_where)
    e2 = pullback_trace(U)
    w = e2.map(lambda v: v ** (q_hat / 2.0))
    dist_h = distance_field(U, h_map).values

    c_req, branches, terms = [], [], []
    for c, r in pairs:
        cG = c[:-1] + (c[-1] + off,)
        depth = g0.vertex_coords(c)[-1] - g0.origin[-1]
        eta = cutoff(G, cG, r / 2.0, r)
        gfield = (eta.grad_norm**2 * dist_h**2 / (1.0 - 2.0 * eta.values) ** 2) ** (n / 2.0)
        if depth <= 0.75 * r:
            inner = ball_mask(G, cG, r / 2.0) & upper
            outer = ball_mask(G, cG, r) & upper
            lhs = float(np.mean(du_pt.values[inner])) ** (1.0 / p_tilde)
            mid = float(np.mean(du_n.values[outer])) ** (1.0 / n)
            rhs_f = float(np.mean(dh_p.values[outer] + gfield[outer]))
            den = mid + rhs_f
            req = lhs / den if den > 0 else (0.0 if lhs <= 0 else float("inf"))
            branches.append("boundary")
            terms.append({"lhs": lhs, "energy": mid, "data": rhs_f})
        else:
            pair = BallPair(cG, r / 2.0, 0.75 * r)
            inner, outer = pair.masks(G)
            f = gfield ** (q_hat / n)
            L, M, Gq = _rhi_terms(w.values, f, n / q_hat, inner, outer)
            req = L / M if M > 0 else (0.0 if L <= 0 else float("inf"))
            branches.append("interior")
            terms.append({"pair": pair, "L": L, "M": M, "G": Gq, "f": f})
        c_req.append(req)
    c = constant_grid_ceil(max(c_req)) if c_req else 0.0
    return BoundaryCertificate(c, pairs, branches, terms, c_req, p_tilde, q_hat)
