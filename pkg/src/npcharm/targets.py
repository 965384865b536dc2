"""NPC target spaces: Euclidean space, metric trees, the hyperbolic plane and products.

Points are stored as flat float payloads so that whole maps fit in one
``(..., k)`` array.  Every space exposes vectorised ``dist``/``geodesic`` on
payload arrays; the module-level functions work on :class:`TargetPoint` and
check space membership.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SpaceTagMismatchError

__all__ = [
    "TargetPoint",
    "TargetSpace",
    "Euclidean",
    "Tree",
    "Hyperbolic",
    "Product",
    "distance",
    "geodesic_point",
    "comparison_gap",
    "comparison_gaps",
    "comparison_tolerance",
    "frechet_mean",
    "space_from_descriptor",
    "tripod",
]


@dataclass(frozen=True, eq=False)
class TargetPoint:
    space_tag: str
    payload: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.payload, dtype=float).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "payload", arr)

    def __eq__(self, other):
        return (
            isinstance(other, TargetPoint)
            and self.space_tag == other.space_tag
            and np.array_equal(self.payload, other.payload)
        )

    def __hash__(self):
        return hash((self.space_tag, self.payload.tobytes()))

    def __repr__(self):
        return f"TargetPoint({self.space_tag}, {self.payload.tolist()})"


class TargetSpace:
    """Common machinery; subclasses implement the metric primitives."""

    kind = "abstract"
    payload_dim = 0

    # -- primitives overridden by subclasses ---------------------------------
    def dist(self, a, b):
        raise NotImplementedError

    def _geodesic(self, a, b, t):
        raise NotImplementedError

    def _mean2(self, pts, w, init=None):
        """Weighted power-2 barycentre of ``pts`` (N, m, k) with weights (N, m)."""
        raise NotImplementedError

    def random_payload(self, rng, size, scale=1.0):
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    # -- shared -------------------------------------------------------------
    @property
    def tag(self) -> str:
        return self._tag

    def normalize(self, a):
        return a

    def geodesic(self, a, b, t):
        """Point a fraction ``t`` of the way from ``a`` to ``b`` (broadcasting)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        t = np.asarray(t, dtype=float)
        a, b = np.broadcast_arrays(a, b)
        tt = np.broadcast_to(t[..., None] if t.ndim else t, a.shape[:-1] + (1,))
        out = self._geodesic(a, b, tt)
        out = np.where(tt == 0.0, a, out)
        return np.where(tt == 1.0, b, out)

    def point(self, *coords) -> TargetPoint:
        return TargetPoint(self.tag, self.normalize(np.asarray(coords, dtype=float).reshape(-1)))

    def wrap(self, payload) -> TargetPoint:
        return TargetPoint(self.tag, payload)

    def check(self, P: TargetPoint):
        if not isinstance(P, TargetPoint):
            raise DomainError(f"expected a TargetPoint, got {type(P).__name__}")
        if P.space_tag != self.tag:
            raise SpaceTagMismatchError(f"point of {P.space_tag} used in {self.tag}")
        return P.payload

    def weighted_mean(self, pts, w, power=2.0, init=None):
        """Batched weighted Fréchet mean.

        ``pts`` has shape (N, m, k), ``w`` shape (N, m).  Power 2 is delegated to
        the space's barycentre; other powers use iteratively reweighted power-2
        means with a geodesic backtracking safeguard, which keeps every step a
        descent step.
        """
        pts = np.asarray(pts, dtype=float)
        w = np.asarray(w, dtype=float)
        if np.any(w.sum(axis=1) <= 0):
            raise DomainError("weights must not all be zero")
        if power == 2.0:
            return self._mean2(pts, w, init)
        return self._irls_mean(pts, w, float(power), init)

    def _objective(self, a, pts, w, power):
        return np.sum(w * self.dist(a[:, None, :], pts) ** power, axis=1)

    def _irls_mean(self, pts, w, power, init=None, max_iter=500, rtol=1e-14):
        a = self._mean2(pts, w) if init is None else np.array(init, dtype=float)
        F = self._objective(a, pts, w, power)
        spread = np.max(self.dist(pts[:, :1, :], pts), axis=1)
        scale = spread + 1e-300
        # all points coincide: the common point is the exact minimiser
        a[spread == 0] = pts[spread == 0, 0]
        active = spread > 0
        for _ in range(max_iter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            ai, pi, wi, Fi = a[idx], pts[idx], w[idx], F[idx]
            d = self.dist(ai[:, None, :], pi)
            floor = 1e-10 * scale[idx][:, None]
            omega = wi * np.maximum(d, floor) ** (power - 2.0)
            cand = self._mean2(pi, omega, init=ai)
            step = np.ones(len(idx))
            best = ai.copy()
            bestF = Fi.copy()
            pending = np.ones(len(idx), dtype=bool)
            for _ in range(40):
                j = np.flatnonzero(pending)
                if j.size == 0:
                    break
                trial = self.geodesic(ai[j], cand[j], step[j])
                Ft = self._objective(trial, pi[j], wi[j], power)
                ok = Ft <= Fi[j]
                best[j[ok]] = trial[ok]
                bestF[j[ok]] = Ft[ok]
                pending[j[ok]] = False
                step[j[~ok]] *= 0.5
            a[idx] = best
            F[idx] = bestF
            done = (Fi - bestF) <= rtol * np.maximum(Fi, 1e-300)
            active[idx[done]] = False
        return a


class Euclidean(TargetSpace):
    kind = "euclidean"

    def __init__(self, m: int):
        if int(m) < 1:
            raise DomainError("euclidean dimension must be >= 1")
        self.m = int(m)
        self.payload_dim = self.m
        self._tag = f"euclidean({self.m})"

    def dist(self, a, b):
        return np.sqrt(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))

    def _geodesic(self, a, b, t):
        return (1.0 - t) * a + t * b

    def _mean2(self, pts, w, init=None):
        return np.einsum("nm,nmk->nk", w, pts) / w.sum(axis=1)[:, None]

    def random_payload(self, rng, size, scale=1.0):
        return rng.normal(scale=scale, size=tuple(np.atleast_1d(size)) + (self.m,))

    def descriptor(self):
        return {"kind": "euclidean", "m": self.m}


class Tree(TargetSpace):
    """Finite metric tree.

    Edges are given as ``(endpoint, endpoint, length)``.  The tree is rooted at
    the first endpoint of the first edge; a point is ``(edge index, offset)``
    with the offset measured from the edge's endpoint nearer the root.
    """

    kind = "tree"
    payload_dim = 2

    def __init__(self, edges):
        edges = [tuple(e) for e in edges]
        if not edges:
            raise DomainError("tree needs at least one edge")
        labels = []
        for u, v, L in edges:
            if not float(L) > 0:
                raise DomainError(f"edge ({u}, {v}) has non-positive length {L}")
            for x in (u, v):
                if x not in labels:
                    labels.append(x)
        if len(labels) != len(edges) + 1:
            raise DomainError("edge list does not describe a tree (cycle or disconnected)")
        vid = {x: i for i, x in enumerate(labels)}
        V, E = len(labels), len(edges)
        adj = [[] for _ in range(V)]
        for e, (u, v, L) in enumerate(edges):
            adj[vid[u]].append((vid[v], e))
            adj[vid[v]].append((vid[u], e))
        parent_v = np.full(E, -1)
        child_v = np.full(E, -1)
        seen = [False] * V
        seen[0] = True
        queue = deque([0])
        while queue:
            x = queue.popleft()
            for y, e in adj[x]:
                if not seen[y]:
                    seen[y] = True
                    parent_v[e], child_v[e] = x, y
                    queue.append(y)
        if not all(seen):
            raise DomainError("edge list does not describe a connected tree")
        self.edges = edges
        self.labels = labels
        self.lengths = np.array([float(L) for _, _, L in edges])
        self.parent_v = parent_v
        self.child_v = child_v
        self.n_vertices = V
        self.is_star = bool(np.all(parent_v == 0))
        edge_of = np.full((V, V), -1)
        for e in range(E):
            edge_of[parent_v[e], child_v[e]] = e
            edge_of[child_v[e], parent_v[e]] = e
        self.edge_of = edge_of

        # vertex distances and explicit vertex paths (trees are tiny)
        D = np.zeros((V, V))
        paths = [[None] * V for _ in range(V)]
        for s in range(V):
            prev = {s: None}
            order = deque([s])
            while order:
                x = order.popleft()
                for y, e in adj[x]:
                    if y not in prev:
                        prev[y] = x
                        D[s, y] = D[s, x] + self.lengths[e]
                        order.append(y)
            for t in range(V):
                p, x = [], t
                while x is not None:
                    p.append(x)
                    x = prev[x]
                paths[s][t] = p[::-1]
        self.D = D
        # endpoint-to-endpoint distances for every ordered edge pair
        ends = np.stack([parent_v, child_v], axis=1)
        self._pair = D[ends[:, None, :, None], ends[None, :, None, :]].reshape(E * E, 4)
        maxlen = max(len(p) for row in paths for p in row)
        self._path_v = np.zeros((V, V, maxlen), dtype=int)
        self._path_cum = np.full((V, V, maxlen), np.inf)
        self._path_len = np.zeros((V, V), dtype=int)
        for s in range(V):
            for t in range(V):
                p = paths[s][t]
                self._path_len[s, t] = len(p)
                self._path_v[s, t, : len(p)] = p
                self._path_v[s, t, len(p):] = p[-1]
                self._path_cum[s, t, : len(p)] = [D[s, x] for x in p]
        key = json.dumps([[str(u), str(v), float(L)] for u, v, L in edges])
        self._tag = "tree:" + hashlib.sha1(key.encode()).hexdigest()[:12]

    # helpers
    def _split(self, a):
        a = np.asarray(a, dtype=float)
        e = a[..., 0].astype(int)
        return e, a[..., 1]

    def vertex_dist(self, v, a):
        """Distance from tree vertex ``v`` (int or int array) to points ``a``."""
        e, s = self._split(a)
        L = self.lengths[e]
        if np.ndim(v) == 0:
            Dv = self.D[:, int(v)]
            return np.minimum(s + Dv[self.parent_v][e], L - s + Dv[self.child_v][e])
        return np.minimum(s + self.D[self.parent_v[e], v], L - s + self.D[self.child_v[e], v])

    def vertex_point(self, v):
        """Canonical payload of vertex ``v``."""
        v = np.asarray(v)
        # the edge whose child is v, or offset 0 on an edge leaving the root
        e = np.argmax(self.child_v[None, :] == np.atleast_1d(v)[:, None], axis=1)
        is_root = np.atleast_1d(v) == 0
        off = np.where(is_root, 0.0, self.lengths[e])
        e = np.where(is_root, 0, e)
        out = np.stack([e.astype(float), off], axis=-1)
        return out.reshape(np.shape(v) + (2,))

    def dist(self, a, b):
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        ea, sa = self._split(a)
        eb, sb = self._split(b)
        ra = self.lengths[ea] - sa
        rb = self.lengths[eb] - sb
        T = self._pair[ea * len(self.edges) + eb]
        other = np.minimum(
            np.minimum(sa + T[..., 0] + sb, sa + T[..., 1] + rb),
            np.minimum(ra + T[..., 2] + sb, ra + T[..., 3] + rb),
        )
        return np.where(ea == eb, np.abs(sa - sb), other)

    def _geodesic(self, a, b, t):
        t = t[..., 0]
        ea, sa = self._split(a)
        eb, sb = self._split(b)
        La, Lb = self.lengths[ea], self.lengths[eb]
        pa, ca = self.parent_v[ea], self.child_v[ea]
        pb, cb = self.parent_v[eb], self.child_v[eb]
        # exit vertex from a's edge
        via_p = sa + self.vertex_dist(pa, b)
        via_c = La - sa + self.vertex_dist(ca, b)
        exit_c = via_c < via_p
        x = np.where(exit_c, ca, pa)
        o1 = np.where(exit_c, La - sa, sa)
        # entry vertex into b's edge
        to_pb = self.D[x, pb] + sb
        to_cb = self.D[x, cb] + (Lb - sb)
        enter_c = to_cb < to_pb
        y = np.where(enter_c, cb, pb)
        o2 = np.where(enter_c, Lb - sb, sb)
        dxy = self.D[x, y]
        total = o1 + dxy + o2
        tau = t * total

        # 1) still on a's edge
        on_a = np.where(exit_c, sa + tau, sa - tau)
        # 2) on b's edge, measured back from b
        back = total - tau
        on_b = np.where(enter_c, sb + back, sb - back)
        # 3) on the vertex path x -> y
        sigma = tau - o1
        cum = self._path_cum[x, y]
        k = np.sum(cum <= sigma[..., None], axis=-1) - 1
        k = np.clip(k, 0, np.maximum(self._path_len[x, y] - 2, 0))
        v1 = np.take_along_axis(self._path_v[x, y], k[..., None], -1)[..., 0]
        v2 = np.take_along_axis(self._path_v[x, y], (k + 1)[..., None], -1)[..., 0]
        c1 = np.take_along_axis(cum, k[..., None], -1)[..., 0]
        pe = self.edge_of[v1, v2]
        pe_safe = np.maximum(pe, 0)
        run = sigma - c1
        off_path = np.where(self.parent_v[pe_safe] == v1, run, self.lengths[pe_safe] - run)

        same = ea == eb
        stage_a = tau <= o1
        stage_b = tau >= o1 + dxy
        e_out = np.where(stage_a, ea, np.where(stage_b, eb, pe_safe))
        s_out = np.where(stage_a, on_a, np.where(stage_b, on_b, off_path))
        e_out = np.where(same, ea, e_out)
        s_out = np.where(same, (1.0 - t) * sa + t * sb, s_out)
        s_out = np.clip(s_out, 0.0, self.lengths[e_out])
        return np.stack([e_out.astype(float), s_out], axis=-1)

    def _line_coords(self, e, pts):
        """Signed coordinates of ``pts`` along the line through edge ``e``.

        For x on edge ``e`` at offset s, d(x, p) = |s - r(p)| exactly.
        """
        dp = self.vertex_dist(self.parent_v[e], pts)
        dc = self.vertex_dist(self.child_v[e], pts)
        on_e = pts[..., 0].astype(int) == e
        return np.where(on_e | (dc < dp), dp, -dp)

    def weighted_mean(self, pts, w, power=2.0, init=None):
        # exact: the objective restricted to each edge is sum w |s - r|^power
        pts = np.asarray(pts, dtype=float)
        w = np.asarray(w, dtype=float)
        if np.any(w.sum(axis=1) <= 0):
            raise DomainError("weights must not all be zero")
        power = float(power)
        N = pts.shape[0]
        best_s = np.zeros(N)
        best_e = np.zeros(N, dtype=int)
        best_F = np.full(N, np.inf)
        W = w.sum(axis=1)
        for e in range(len(self.edges)):
            L = self.lengths[e]
            r = self._line_coords(e, pts)
            if power == 2.0:
                s = np.clip(np.sum(w * r, axis=1) / W, 0.0, L)
            else:
                s = _convex_argmin_1d(r, w, power, 0.0, L)
            F = np.sum(w * np.abs(s[:, None] - r) ** power, axis=1)
            better = F < best_F
            best_F = np.where(better, F, best_F)
            best_s = np.where(better, s, best_s)
            best_e = np.where(better, e, best_e)
        return np.stack([best_e.astype(float), best_s], axis=-1)

    def _mean2(self, pts, w, init=None):
        return self.weighted_mean(pts, w, 2.0)

    def random_payload(self, rng, size, scale=1.0):
        size = tuple(np.atleast_1d(size))
        p = self.lengths / self.lengths.sum()
        e = rng.choice(len(self.edges), size=size, p=p)
        s = rng.uniform(0.0, 1.0, size=size) * self.lengths[e]
        return np.stack([e.astype(float), s], axis=-1)

    def point(self, edge, offset) -> TargetPoint:
        if not isinstance(edge, (int, np.integer)):
            matches = [i for i, (u, v, _) in enumerate(self.edges) if set((u, v)) == set(edge)]
            if not matches:
                raise DomainError(f"no edge {edge!r}")
            edge = matches[0]
        L = self.lengths[edge]
        if not 0.0 <= offset <= L:
            raise DomainError(f"offset {offset} outside [0, {L}]")
        return TargetPoint(self.tag, [float(edge), float(offset)])

    def descriptor(self):
        return {"kind": "tree", "edges": [[u, v, float(L)] for u, v, L in self.edges]}


def _convex_argmin_1d(r, w, power, lo, hi, iters=80):
    """Minimise sum_j w_j |s - r_j|^power over s in [lo, hi] (rows independent)."""
    a = np.full(r.shape[0], lo, dtype=float)
    b = np.full(r.shape[0], hi, dtype=float)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        diff = mid[:, None] - r
        slope = np.sum(w * np.sign(diff) * np.abs(diff) ** (power - 1.0), axis=1)
        right = slope > 0
        b = np.where(right, mid, b)
        a = np.where(right, a, mid)
    return 0.5 * (a + b)


def _mink(a, b):
    return -a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


class Hyperbolic(TargetSpace):
    """Hyperbolic plane in the hyperboloid model x0^2 - x1^2 - x2^2 = 1, x0 >= 1."""

    kind = "hyperbolic2"
    payload_dim = 3

    def __init__(self):
        self._tag = "hyperbolic2"

    def normalize(self, a):
        a = np.array(a, dtype=float)
        a[..., 0] = np.sqrt(1.0 + a[..., 1] ** 2 + a[..., 2] ** 2)
        return a

    def dist(self, a, b):
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        # 2 asinh(|a-b|_M / 2) equals arcosh(-<a,b>) but keeps precision for nearby points
        q = np.maximum(_mink(diff, diff), 0.0)
        return 2.0 * np.arcsinh(0.5 * np.sqrt(q))

    def log(self, a, x):
        diff = x - a
        q = np.maximum(_mink(diff, diff), 0.0)
        d = 2.0 * np.arcsinh(0.5 * np.sqrt(q))
        u = diff - (0.5 * q)[..., None] * a  # x - cosh(d) a, without cancellation
        small = d < 1e-8
        factor = np.where(small, 1.0, d / np.where(small, 1.0, np.sinh(d)))
        return factor[..., None] * u

    def exp(self, a, v):
        nv = np.sqrt(np.maximum(_mink(v, v), 0.0))
        small = nv < 1e-8
        sinhc = np.where(small, 1.0 + nv**2 / 6.0, np.sinh(nv) / np.where(small, 1.0, nv))
        return self.normalize(np.cosh(nv)[..., None] * a + sinhc[..., None] * v)

    def _geodesic(self, a, b, t):
        return self.exp(a, t * self.log(a, b))

    def _mean2(self, pts, w, init=None, max_iter=200):
        if init is None:
            avg = np.einsum("nm,nmk->nk", w, pts)
            avg = avg / np.sqrt(np.maximum(-_mink(avg, avg), 1e-300))[:, None]
            a = self.normalize(avg)
        else:
            a = np.array(init, dtype=float)
        W = w.sum(axis=1)[:, None]
        for _ in range(max_iter):
            v = np.einsum("nm,nmk->nk", w, self.log(a[:, None, :], pts)) / W
            a = self.exp(a, v)
            step = np.sqrt(np.maximum(_mink(v, v), 0.0))
            if np.all(step < 1e-15):
                break
        return a

    def from_polar(self, r, theta):
        return self.point(np.cosh(r), np.sinh(r) * np.cos(theta), np.sinh(r) * np.sin(theta))

    def random_payload(self, rng, size, scale=1.0):
        size = tuple(np.atleast_1d(size))
        r = scale * np.sqrt(rng.uniform(size=size))
        th = rng.uniform(0, 2 * np.pi, size=size)
        return self.normalize(
            np.stack([np.cosh(r), np.sinh(r) * np.cos(th), np.sinh(r) * np.sin(th)], axis=-1)
        )

    def descriptor(self):
        return {"kind": "hyperbolic2"}


class Product(TargetSpace):
    """l2 product of NPC factors; payloads are concatenated factor payloads."""

    kind = "product"

    def __init__(self, factors):
        self.factors = list(factors)
        if len(self.factors) < 2:
            raise DomainError("product needs at least two factors")
        self.slices = []
        start = 0
        for f in self.factors:
            self.slices.append(slice(start, start + f.payload_dim))
            start += f.payload_dim
        self.payload_dim = start
        self._tag = "product(" + ",".join(f.tag for f in self.factors) + ")"

    def split(self, a):
        return [a[..., s] for s in self.slices]

    def normalize(self, a):
        a = np.array(a, dtype=float)
        for f, s in zip(self.factors, self.slices):
            a[..., s] = f.normalize(a[..., s])
        return a

    def dist(self, a, b):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        sq = sum(f.dist(a[..., s], b[..., s]) ** 2 for f, s in zip(self.factors, self.slices))
        return np.sqrt(sq)

    def _geodesic(self, a, b, t):
        tt = t[..., 0]
        return np.concatenate(
            [f.geodesic(a[..., s], b[..., s], tt) for f, s in zip(self.factors, self.slices)], axis=-1
        )

    def _mean2(self, pts, w, init=None):
        parts = []
        for f, s in zip(self.factors, self.slices):
            parts.append(f._mean2(pts[..., s], w, None if init is None else init[..., s]))
        return np.concatenate(parts, axis=-1)

    def random_payload(self, rng, size, scale=1.0):
        return np.concatenate([f.random_payload(rng, size, scale) for f in self.factors], axis=-1)

    def point(self, *points) -> TargetPoint:
        if len(points) != len(self.factors):
            raise DomainError("product point needs one component per factor")
        payload = [f.check(p) for f, p in zip(self.factors, points)]
        return TargetPoint(self.tag, np.concatenate(payload))

    def descriptor(self):
        return {"kind": "product", "factors": [f.descriptor() for f in self.factors]}


def tripod(length=1.0) -> Tree:
    """Three edges of equal length glued at the branch vertex ``"o"``."""
    return Tree([("o", "a", length), ("o", "b", length), ("o", "c", length)])


def space_from_descriptor(desc) -> TargetSpace:
    if isinstance(desc, TargetSpace):
        return desc
    if isinstance(desc, str):
        desc = {"kind": desc}
    kind = desc.get("kind")
    if kind == "euclidean":
        return Euclidean(int(desc.get("m", 1)))
    if kind == "tree":
        return Tree([tuple(e) for e in desc["edges"]])
    if kind == "tripod":
        return tripod(float(desc.get("length", 1.0)))
    if kind in ("hyperbolic", "hyperbolic2"):
        return Hyperbolic()
    if kind == "product":
        return Product([space_from_descriptor(f) for f in desc["factors"]])
    raise DomainError(f"unknown target kind {kind!r}")


# -- point-level operations ---------------------------------------------------

def distance(space: TargetSpace, P: TargetPoint, Q: TargetPoint) -> float:
    return float(space.dist(space.check(P), space.check(Q)))


def geodesic_point(space: TargetSpace, P: TargetPoint, Q: TargetPoint, t: float) -> TargetPoint:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    return space.wrap(space.geodesic(space.check(P), space.check(Q), t))


def comparison_gap(space, P, Q, R, lam) -> float:
    """Slack in the NPC comparison inequality for the triangle PQR.

    Returns (1-l) d^2(P,Q) + l d^2(P,R) - l(1-l) d^2(Q,R) - d^2(P, Q_l), with
    Q_l the point a fraction l along [Q, R].  Non-negative in NPC spaces.
    """
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda={lam} outside [0, 1]")
    return float(comparison_gaps(space, space.check(P), space.check(Q), space.check(R), lam))


def comparison_gaps(space, p, q, r, lam):
    """Batched :func:`comparison_gap` on payload arrays of shape (..., k), with ``lam`` broadcasting."""
    lam = np.asarray(lam, dtype=float)
    if np.any((lam < 0.0) | (lam > 1.0)):
        raise DomainError("lambda outside [0, 1]")
    ql = space.geodesic(q, r, lam)
    d = space.dist
    return (1 - lam) * d(p, q) ** 2 + lam * d(p, r) ** 2 - lam * (1 - lam) * d(q, r) ** 2 - d(p, ql) ** 2


def comparison_tolerance(space, P, Q, R, rel=1e-9) -> float:
    """Tolerance for :func:`comparison_gap` scaled by the squared triangle diameter."""
    p, q, r = space.check(P), space.check(Q), space.check(R)
    diam = max(float(space.dist(p, q)), float(space.dist(p, r)), float(space.dist(q, r)))
    return rel * diam**2


def frechet_mean(space, points, weights=None, power=2.0) -> TargetPoint:
    """Weighted minimiser of sum_i w_i d^power(a, x_i)."""
    if len(points) == 0:
        raise DomainError("frechet_mean of an empty point list")
    if power < 1:
        raise DomainError("power must be >= 1")
    pts = np.stack([space.check(P) for P in points])[None]
    w = np.ones(len(points)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(points),) or np.any(w < 0):
        raise DomainError("weights must be non-negative, one per point")
    return space.wrap(space.weighted_mean(pts, w[None], power)[0])
