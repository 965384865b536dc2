import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npcharm.errors import DomainError
from npcharm.grid import ball_fits, ball_mask, build_grid, cutoff, dyadic_cubes


def test_unit_square_counts():
    g = build_grid({"kind": "cube"}, 5, 0.25)
    assert g.interior.sum() == 9
    assert g.boundary.sum() == 16
    assert g.exterior.sum() == 0


@given(st.integers(3, 30), st.integers(3, 30))
def test_rectangle_counts(n1, n2):
    g = build_grid({"kind": "cube"}, (n1, n2), 0.1)
    assert g.interior.sum() == (n1 - 2) * (n2 - 2)
    assert g.boundary.sum() == n1 * n2 - (n1 - 2) * (n2 - 2)


def test_half_disk_flat_side_is_boundary():
    N = 33
    g = build_grid({"kind": "half_ball", "radius": 1.0}, N, 2.0 / (N - 1))
    assert g.shape == (33, 17)
    X = g.coords()
    flat = (np.abs(X[..., 1]) < 1e-12) & (np.linalg.norm(X, axis=-1) < 1.0 - 1e-9)
    assert flat.sum() == 31
    assert np.all(g.boundary[flat])
    assert np.array_equal(g.gamma, flat)
    # rim vertices off the flat side are boundary too, nothing below x2 = 0
    assert np.all(X[g.domain][:, 1] >= -1e-12)


def test_ball_grid_is_centred():
    g = build_grid({"kind": "ball", "radius": 2.0, "center": [1.0, -1.0]}, 41, 0.1)
    assert g.labels[20, 20] == 2
    np.testing.assert_allclose(g.vertex_coords((20, 20)), [1.0, -1.0], atol=1e-12)


def test_graph_domain_chart(rng):
    desc = {"kind": "graph", "radius": 1.0, "phi": "0.2*abs(x1)", "L": 0.2}
    g = build_grid(desc, 33, 1.0 / 16)
    half = build_grid({"kind": "half_ball", "radius": 1.0}, 33, 1.0 / 16)
    assert np.array_equal(g.labels, half.labels)
    Y = g.physical_coords()
    X = g.coords()
    np.testing.assert_allclose(Y[..., 1], X[..., 1] + 0.2 * np.abs(X[..., 0]), atol=1e-15)
    np.testing.assert_allclose(g.chart.forward(Y), X, atol=1e-15)
    pts = rng.uniform(-2, 2, size=(10_000, 2))
    assert np.max(np.abs(g.chart.inverse(g.chart.forward(pts)) - pts)) <= 1e-10
    assert g.chart.lipschitz == pytest.approx(1.2)


def test_build_grid_errors():
    with pytest.raises(DomainError):
        build_grid({"kind": "torus"}, 9, 0.1)
    with pytest.raises(DomainError):
        build_grid({"kind": "cube"}, 9, -0.1)
    with pytest.raises(DomainError):
        build_grid({"kind": "ball", "radius": 1.0}, 3, 2.0)
    with pytest.raises(DomainError):
        build_grid({"kind": "graph"}, 9, 0.25)


def test_cutoff_minimal_annulus():
    g = build_grid({"kind": "cube"}, 33, 1 / 32)
    h = g.spacing
    s = 0.25
    eta = cutoff(g, (16, 16), s - 2 * h, s)
    r = np.linalg.norm(g.coords() - 0.5, axis=-1)
    assert np.all(eta.values[r <= s - 2 * h + 1e-12] == 1.0)
    assert np.all(eta.values[r >= s - 1e-12] == 0.0)
    ramp = (eta.values > 0) & (eta.values < 1)
    assert ramp.any()
    assert eta.grad_bound <= 1.0 / (2 * h) * eta.constant + 1e-12
    assert np.all(eta.grad_norm <= eta.grad_bound + 1e-12)


def test_cutoff_is_one_on_inner_ball():
    g = build_grid({"kind": "cube"}, 33, 1 / 32)
    eta = cutoff(g, (16, 16), 0.25, 0.5)
    r = np.linalg.norm(g.coords() - 0.5, axis=-1)
    assert np.all(eta.values[r <= 0.25] == 1.0)


def test_cutoff_avoids_one_half(rng):
    g = build_grid({"kind": "cube"}, 65, 1 / 64)
    for _ in range(20):
        s = rng.uniform(0.1, 0.5)
        t = rng.uniform(0.0, s - 2 * g.spacing)
        eta = cutoff(g, (32, 32), t, s)
        assert not np.any(eta.values == 0.5)
        assert eta.floor >= g.spacing / (4 * (s - t)) * (1 - 1e-12)
        assert np.all(eta.grad_norm <= eta.constant / (s - t) + 1e-9)


def test_cutoff_errors():
    g = build_grid({"kind": "cube"}, 17, 1 / 16)
    with pytest.raises(DomainError):
        cutoff(g, (8, 8), 0.3, 0.2)
    with pytest.raises(DomainError):
        cutoff(g, (8, 8), 0.2, 0.7)


def test_dyadic_cubes_containment_3d():
    g = build_grid({"kind": "cube", "dim": 3}, 17, 1 / 16)
    pairs = dyadic_cubes(g, [2, 4, 8])
    assert pairs
    for p in pairs:
        outer = g.domain[p.outer]
        assert outer.shape == (2 * p.side + 1,) * 3 and outer.all()
        for a, b in zip(p.inner, p.outer):
            assert b.start <= a.start and a.stop <= b.stop


def test_dyadic_cubes_too_large():
    g = build_grid({"kind": "cube"}, 17, 1 / 16)
    assert dyadic_cubes(g, [16]) == []


def test_dyadic_cube_count_oracle():
    g = build_grid({"kind": "cube"}, 17, 1 / 16)
    # centres c with c - 4 >= 0 and c + 4 <= 16 on each axis
    assert len(dyadic_cubes(g, [4])) == 9 * 9


def test_dyadic_cubes_on_disk_match_enumeration():
    g = build_grid({"kind": "ball", "radius": 1.0}, 33, 1 / 16)
    got = {(p.center, p.side) for p in dyadic_cubes(g, [2, 4, 8])}
    want = set()
    for side in (2, 4, 8):
        for i in range(33):
            for j in range(33):
                if i - side < 0 or j - side < 0 or i + side > 32 or j + side > 32:
                    continue
                if g.domain[i - side:i + side + 1, j - side:j + side + 1].all():
                    want.add(((i, j), side))
    assert got == want


def test_dyadic_cubes_rejects_odd_side():
    g = build_grid({"kind": "cube"}, 17, 1 / 16)
    with pytest.raises(DomainError):
        dyadic_cubes(g, [3])


@given(st.floats(0.05, 0.45), st.integers(0, 32), st.integers(0, 32))
def test_ball_fits_agrees_with_mask(radius, i, j):
    g = build_grid({"kind": "cube"}, 33, 1 / 32)
    # lattice points of the closed ball reach floor(r/h) steps along each axis
    k = int(np.floor(radius * 32 + 1e-9))
    inside_box = min(i, j) - k >= 0 and max(i, j) + k <= 32
    assert ball_fits(g, (i, j), radius) == inside_box
    m = ball_mask(g, (i, j), radius)
    assert m[i, j]
