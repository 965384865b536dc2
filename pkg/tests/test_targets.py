import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npcharm.errors import DomainError, SpaceTagMismatchError
from npcharm.targets import (
    Euclidean,
    Hyperbolic,
    Product,
    Tree,
    comparison_gap,
    distance,
    frechet_mean,
    geodesic_point,
    space_from_descriptor,
    tripod,
)

FIVE_EDGE = [("r", "a", 1.0), ("a", "b", 0.5), ("a", "c", 2.0), ("r", "d", 1.5), ("d", "e", 0.7)]


def all_spaces():
    return {
        "euclidean2": Euclidean(2),
        "euclidean3": Euclidean(3),
        "tripod": tripod(),
        "tree5": Tree(FIVE_EDGE),
        "hyperbolic2": Hyperbolic(),
        "tripod_x_R": Product([tripod(), Euclidean(1)]),
    }


def tripod_oracle(a, b):
    """Explicit tripod metric: same leg -> |s-t|, different legs -> s+t."""
    same = a[..., 0] == b[..., 0]
    return np.where(same, np.abs(a[..., 1] - b[..., 1]), a[..., 1] + b[..., 1])


# -- examples ------------------------------------------------------------------


def test_distance_examples():
    E = Euclidean(2)
    assert distance(E, E.point(0, 0), E.point(3, 4)) == 5.0
    T = tripod()
    assert distance(T, T.point(0, 0.3), T.point(1, 0.7)) == pytest.approx(1.0, abs=1e-15)
    H = Hyperbolic()
    P = H.point(1, 0, 0)
    Q = H.point(np.cosh(1.0), np.sinh(1.0), 0)
    assert distance(H, P, Q) == pytest.approx(1.0, abs=1e-12)


def test_geodesic_examples():
    E = Euclidean(2)
    assert np.array_equal(geodesic_point(E, E.point(0, 0), E.point(2, 0), 0.5).payload, [1.0, 0.0])
    T = tripod()
    M = geodesic_point(T, T.point(0, 0.6), T.point(1, 0.6), 0.5)
    assert M.payload[1] == pytest.approx(0.0, abs=1e-15)
    H = Hyperbolic()
    M = geodesic_point(H, H.point(1, 0, 0), H.point(np.cosh(2.0), np.sinh(2.0), 0), 0.5)
    np.testing.assert_allclose(M.payload, [np.cosh(1.0), np.sinh(1.0), 0.0], atol=1e-12)


def test_comparison_gap_examples():
    E = Euclidean(2)
    assert abs(comparison_gap(E, E.point(0.3, -1), E.point(2, 5), E.point(-4, 1), 0.5)) < 1e-12
    # three leg tips of the unit tripod: pairwise distance 2, Q_1/2 is the branch point
    T = tripod()
    P, Q, R = T.point(0, 1.0), T.point(1, 1.0), T.point(2, 1.0)
    d = lambda x, y: float(tripod_oracle(x.payload, y.payload))  # noqa: E731
    oracle = 0.5 * d(P, Q) ** 2 + 0.5 * d(P, R) ** 2 - 0.25 * d(Q, R) ** 2 - 1.0**2
    assert oracle == 2.0
    assert comparison_gap(T, P, Q, R, 0.5) == pytest.approx(2.0, abs=1e-14)
    for lam in (0.0, 0.3, 1.0):
        assert comparison_gap(T, P, Q, Q, lam) == pytest.approx(0.0, abs=1e-14)


def test_frechet_mean_examples():
    E = Euclidean(2)
    m = frechet_mean(E, [E.point(0, 0), E.point(2, 4)])
    np.testing.assert_allclose(m.payload, [1.0, 2.0], atol=1e-14)
    H = Hyperbolic()
    P = H.from_polar(0.7, 0.2)
    np.testing.assert_allclose(frechet_mean(H, [P]).payload, P.payload, atol=1e-12)
    T = tripod()
    c = frechet_mean(T, [T.point(0, 1.0), T.point(1, 1.0), T.point(2, 1.0)])
    assert c.payload[1] == pytest.approx(0.0, abs=1e-14)


def test_frechet_mean_hyperbolic_midpoint():
    H = Hyperbolic()
    P, Q = H.from_polar(1.5, 0.0), H.from_polar(1.5, 2.0)
    m = frechet_mean(H, [P, Q])
    mid = geodesic_point(H, P, Q, 0.5)
    np.testing.assert_allclose(m.payload, mid.payload, atol=1e-10)


# -- errors --------------------------------------------------------------------


def test_errors():
    T, E = tripod(), Euclidean(2)
    with pytest.raises(DomainError):
        geodesic_point(E, E.point(0, 0), E.point(1, 1), 1.5)
    with pytest.raises(SpaceTagMismatchError):
        distance(T, E.point(0, 0), E.point(1, 1))
    with pytest.raises(DomainError):
        Tree([("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)])
    with pytest.raises(DomainError):
        T.point(0, 1.5)
    with pytest.raises(DomainError):
        frechet_mean(E, [])
    with pytest.raises(DomainError):
        space_from_descriptor({"kind": "sphere"})


def test_descriptor_round_trip():
    for S in all_spaces().values():
        assert space_from_descriptor(S.descriptor()).tag == S.tag


# -- vectorised invariants on 10^4 random triples ------------------------------


@pytest.mark.parametrize("name", list(all_spaces()))
def test_metric_axioms(name, rng):
    S = all_spaces()[name]
    a, b, c = (S.random_payload(rng, 10_000, scale=2.0) for _ in range(3))
    dab, dba, dbc, dac = S.dist(a, b), S.dist(b, a), S.dist(b, c), S.dist(a, c)
    scale = np.maximum.reduce([dab, dbc, dac]) + 1e-300
    assert np.all(dab >= 0)
    assert np.max(np.abs(dab - dba) / scale) <= 1e-10
    assert np.all(S.dist(a, a) <= 1e-10 * scale)
    assert np.all(dac <= dab + dbc + 1e-10 * scale)


@pytest.mark.parametrize("name", list(all_spaces()))
def test_midpoint_convexity_of_distance(name, rng):
    S = all_spaces()[name]
    g0, g1, s0, s1 = (S.random_payload(rng, 10_000, scale=2.0) for _ in range(4))
    lhs = S.dist(S.geodesic(g0, g1, 0.5), S.geodesic(s0, s1, 0.5))
    rhs = 0.5 * S.dist(g0, s0) + 0.5 * S.dist(g1, s1)
    assert np.all(lhs <= rhs + 1e-9)


@pytest.mark.parametrize("name", list(all_spaces()))
def test_geodesic_endpoints(name, rng):
    S = all_spaces()[name]
    a, b = S.random_payload(rng, 1000), S.random_payload(rng, 1000)
    if name == "hyperbolic2":
        assert np.max(np.abs(S.geodesic(a, b, 0.0) - a)) <= 1e-12
        assert np.max(np.abs(S.geodesic(a, b, 1.0) - b)) <= 1e-12
    else:
        assert np.array_equal(S.geodesic(a, b, 0.0), a)
        assert np.array_equal(S.geodesic(a, b, 1.0), b)


@pytest.mark.parametrize("name", list(all_spaces()))
def test_geodesic_is_constant_speed(name, rng):
    S = all_spaces()[name]
    a, b = S.random_payload(rng, 2000), S.random_payload(rng, 2000)
    t = rng.uniform(size=2000)
    m = S.geodesic(a, b, t)
    d = S.dist(a, b)
    np.testing.assert_allclose(S.dist(a, m), t * d, atol=1e-9)
    np.testing.assert_allclose(S.dist(m, b), (1 - t) * d, atol=1e-9)


# -- hypothesis properties -------------------------------------------------------

leg = st.integers(0, 2)
off = st.floats(0.0, 1.0, allow_nan=False)


@given(leg, off, leg, off)
def test_tripod_distance_matches_explicit_metric(e1, s1, e2, s2):
    T = tripod()
    a, b = np.array([e1, s1], float), np.array([e2, s2], float)
    assert T.dist(a, b) == pytest.approx(float(tripod_oracle(a, b)), abs=1e-14)


@given(leg, off, leg, off, leg, off, st.floats(0.0, 1.0))
def test_tripod_comparison_gap_nonnegative(e1, s1, e2, s2, e3, s3, lam):
    T = tripod()
    P, Q, R = T.point(e1, s1), T.point(e2, s2), T.point(e3, s3)
    assert comparison_gap(T, P, Q, R, lam) >= -1e-12


@given(st.lists(st.tuples(leg, off, st.floats(0.05, 1.0)), min_size=1, max_size=6),
       st.sampled_from([2.0, 3.0]))
def test_tripod_frechet_objective_matches_brute_force(data, power):
    T = tripod()
    pts = np.array([[e, s] for e, s, _ in data])
    w = np.array([wt for _, _, wt in data])
    m = frechet_mean(T, [T.wrap(p) for p in pts], w, power=power).payload
    F = lambda x: np.sum(w * tripod_oracle(x[..., None, :], pts) ** power, axis=-1)  # noqa: E731
    grid = np.array([[e, s] for e in range(3) for s in np.linspace(0, 1, 20001)])
    best = F(grid).min()
    assert F(m) <= best * (1 + 1e-4) + 1e-12


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_hyperbolic_distance_matches_arcosh(x1, y1, x2, y2):
    H = Hyperbolic()
    a, b = H.normalize([0, x1, y1]), H.normalize([0, x2, y2])
    inner = a[0] * b[0] - a[1] * b[1] - a[2] * b[2]
    assert H.dist(a, b) == pytest.approx(np.arccosh(max(inner, 1.0)), rel=1e-9, abs=1e-7)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=7), st.floats(1.2, 4.0))
def test_euclidean_power_mean_minimises(xs, power):
    from scipy.optimize import minimize_scalar

    E = Euclidean(1)
    pts = np.array(xs)[:, None]
    m = frechet_mean(E, [E.wrap(p) for p in pts], power=power).payload[0]
    F = lambda x: np.sum(np.abs(x - pts[:, 0]) ** power)  # noqa: E731
    ref = minimize_scalar(F, bounds=(min(xs) - 1, max(xs) + 1), method="bounded", options={"xatol": 1e-12})
    assert F(m) <= F(ref.x) * (1 + 1e-6) + 1e-12
