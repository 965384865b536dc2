import json
import textwrap

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npcharm import cli
from npcharm.config import load_config, parse_config
from npcharm.energy import MetricMap
from npcharm.errors import ConfigError, MapDimensionError, MapFormatError, SpaceTagMismatchError
from npcharm.expr import Expression
from npcharm.grid import build_grid
from npcharm.io import load_map, read_boundary_table, save_map, write_field_csv
from npcharm.energy import pullback_trace
from npcharm.solver import tripod_arc_boundary
from npcharm.targets import Euclidean, Hyperbolic, Product, tripod

TINY = """\
domain: {kind: cube, side: 1.0}
resolution: 5
target: {kind: euclidean, m: 1}
boundary: {expression: "x1"}
solver: {p: 2, tol_step: 1.0e-13}
seed: 0
"""

SMALL = """\
domain: {kind: cube, side: 1.0}
resolution: 33
target: {kind: euclidean, m: 1}
boundary: {expression: "x1"}
solver: {p: 2, tol_step: 1.0e-12}
checks: [holder, parallelogram, convexity, quasiratio]
options:
  holder: {radii: [0.4, 0.3, 0.2, 0.1]}
seed: 0
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


# -- configuration ------------------------------------------------------------------------


def test_unknown_check_names_field_and_line():
    text = SMALL.replace("checks: [holder, parallelogram, convexity, quasiratio]",
                         "checks:\n  - holder\n  - hoelder")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.field == "checks[1]"
    assert exc.value.line == 8
    assert "hoelder" in str(exc.value) and "checks[1]" in str(exc.value)


@pytest.mark.parametrize(
    "old,new,field",
    [
        ("seed: 0", "sede: 0", "sede"),
        ("tol_step: 1.0e-12", "tolerance: 1.0e-12", "solver.tolerance"),
        ('"x1"', '"x1 +"', "boundary.expression"),
        ('"x1"', '"__import__(1)"', "boundary.expression"),
        ("kind: euclidean", "kind: sphere", "target"),
        ("resolution: 33", "resolution: 2", "resolution"),
        ("holder: {radii", "hoelder: {radii", "options.hoelder"),
    ],
)
def test_config_errors_locate_field(old, new, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(SMALL.replace(old, new))
    assert exc.value.field == field
    assert exc.value.line is not None


def test_missing_table_file(tmp_path):
    text = SMALL.replace('{expression: "x1"}', "{table: nowhere.csv}")
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, text))
    assert exc.value.field == "boundary.table"


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("domain: {kind: cube\nresolution: 5\n")
    assert exc.value.line is not None


def test_config_echo_and_digest_are_stable():
    a, b = parse_config(SMALL), parse_config(SMALL)
    assert a.digest() == b.digest()
    assert parse_config(SMALL.replace("seed: 0", "seed: 1")).digest() != a.digest()
    assert a.echo()["options"]["holder"]["radii"] == [0.4, 0.3, 0.2, 0.1]


def test_boundary_forms(tmp_path):
    cfg = parse_config(SMALL.replace('{expression: "x1"}', '{expression: ["x1", "x2"]}')
                       .replace("{kind: euclidean, m: 1}", "hyperbolic2"))
    g, H = cfg.build_grid(), cfg.build_space()
    vals = cfg.boundary_values(g, H)
    assert isinstance(H, Hyperbolic) and vals.shape == g.shape + (3,)
    np.testing.assert_allclose(vals[..., 1], g.physical_coords()[..., 0])

    T = tripod()
    tg = build_grid({"kind": "ball", "radius": 1.0}, 17, 1 / 8)
    data = tripod_arc_boundary(T, tg)
    rows = ["i1,i2,edge,offset"] + [f"{i},{j},{float(data[i, j, 0])!r},{float(data[i, j, 1])!r}"
                                    for i, j in np.argwhere(tg.boundary)]
    (tmp_path / "b.csv").write_text("\n".join(rows))
    text = f"""\
domain: ball
resolution: 17
target: tripod
boundary: {{table: b.csv}}
"""
    cfg = load_config(write(tmp_path, text))
    vals = cfg.boundary_values(cfg.build_grid(), cfg.build_space())
    assert np.array_equal(vals[tg.boundary], data[tg.boundary])
    assert np.array_equal(cfg.boundary_values(tg, T)[tg.boundary], data[tg.boundary])


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_expression_matches_numpy(x, y):
    e = Expression("abs(x1) ** 2 - sin(x2) * max(x1, x2) / (1 + cos(pi * x2) ** 2)")
    want = abs(x) ** 2 - np.sin(y) * max(x, y) / (1 + np.cos(np.pi * y) ** 2)
    assert e(np.array([x, y])) == pytest.approx(want, rel=1e-12, abs=1e-12)


# -- map dumps ------------------------------------------------------------------------------


def tripod_map():
    T = tripod()
    g = build_grid({"kind": "ball", "radius": 1.0}, 33, 1 / 16)
    return MetricMap(g, T, tripod_arc_boundary(T, g))


def test_map_round_trip_bitwise(tmp_path):
    u = tripod_map()
    save_map(u, tmp_path / "m.bin")
    v = load_map(tmp_path / "m.bin", space=u.space, dim=2, shape=u.grid.shape)
    assert v.values.tobytes() == u.values.tobytes()
    assert np.array_equal(v.grid.labels, u.grid.labels) and v.grid.spacing == u.grid.spacing
    assert v.space.tag == u.space.tag


@given(st.integers(0, 2**31))
def test_map_round_trip_random_targets(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    space = [Euclidean(3), Hyperbolic(), Product([tripod(), Euclidean(1)])][seed % 3]
    g = build_grid({"kind": "half_ball", "radius": 1.0}, 9, 0.25)
    u = MetricMap(g, space, space.random_payload(rng, g.shape))
    path = tmp_path_factory.mktemp("dump") / "m.bin"
    save_map(u, path)
    assert load_map(path).values.tobytes() == u.values.tobytes()


def test_map_errors(tmp_path):
    u = tripod_map()
    path = tmp_path / "m.bin"
    save_map(u, path)
    blob = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(blob[:-7])
    with pytest.raises(MapFormatError):
        load_map(tmp_path / "short.bin")
    (tmp_path / "junk.bin").write_bytes(b"hello\n" + blob)
    with pytest.raises(MapFormatError):
        load_map(tmp_path / "junk.bin")
    (tmp_path / "head.bin").write_bytes(blob[:40])
    with pytest.raises(MapFormatError):
        load_map(tmp_path / "head.bin")
    with pytest.raises(SpaceTagMismatchError):
        load_map(path, space=Euclidean(2))
    with pytest.raises(MapDimensionError):
        load_map(path, dim=3)
    with pytest.raises(MapDimensionError):
        load_map(path, shape=(17, 17))


def test_field_csv(tmp_path):
    u = tripod_map()
    f = pullback_trace(u)
    write_field_csv(tmp_path / "f.csv", f, "e")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,e" and len(lines) == 1 + int(f.mask.sum())


def test_boundary_table_wrong_width(tmp_path):
    (tmp_path / "t.csv").write_text("0,0,1.0\n")
    g = build_grid({"kind": "cube"}, 5, 0.25)
    with pytest.raises(MapFormatError):
        read_boundary_table(tmp_path / "t.csv", g, 2)


# -- runs ------------------------------------------------------------------------------------


def test_minimal_5x5_solve(tmp_path):
    rep, code = cli.run(parse_config(TINY), "solve", out=tmp_path)
    assert code == 0
    assert rep["solve"]["energy"] == pytest.approx(1.0, rel=0.03)
    assert rep["solve"]["ks_to_edge_ratio"] is None  # too coarse for the eps-ladder
    assert (tmp_path / "map.bin").exists() and (tmp_path / "report.json").exists()


def test_check_run_reports_alpha(tmp_path):
    rep, code = cli.run(parse_config(SMALL), "report", out=tmp_path)
    assert code == 0 and rep["passed"]
    assert rep["solve"]["energy"] == pytest.approx(1.0, rel=0.03)
    assert rep["checks"]["holder"]["fits"][0]["alpha"] == pytest.approx(1.0, abs=0.02)
    assert rep["checks"]["quasiratio"]["q_hat"] == pytest.approx(1.0, abs=1e-6)
    for name in ("energies.csv", "energy_density.csv", "holder.csv", "energy_history.png",
                 "energy_density.png", "holder.png"):
        assert (tmp_path / name).stat().st_size > 0
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert on_disk["report_hash"] == rep["report_hash"]


def test_check_without_checks_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        cli.run(parse_config(TINY), "check", out=tmp_path)


def test_failed_certificate_gives_nonzero_exit(tmp_path):
    text = SMALL.replace("holder: {radii: [0.4, 0.3, 0.2, 0.1]}", "parallelogram: {tol: 0.0}")
    rep, code = cli.run(parse_config(text), "check", out=tmp_path)
    assert code == 1 and not rep["passed"]
    assert not rep["checks"]["parallelogram"]["passed"]
    assert "error" in rep["checks"]["holder"]  # default radii do not fit a 33-vertex grid


def test_solver_failure_writes_partial_report(tmp_path):
    text = SMALL.replace("solver: {p: 2, tol_step: 1.0e-12}", "solver: {p: 2, max_sweeps: 2}")
    rep, code = cli.run(parse_config(text), "check", out=tmp_path)
    assert code == 2 and "error" in rep["solve"]
    assert len(rep["solve"]["energies"]) == 3
    assert json.loads((tmp_path / "report.json").read_text())["passed"] is False


def test_load_map_instead_of_solving(tmp_path):
    cli.run(parse_config(SMALL), "solve", out=tmp_path / "a")
    rep, code = cli.run(parse_config(SMALL), "check", out=tmp_path / "b", map_path=tmp_path / "a" / "map.bin")
    assert code == 0 and rep["solve"]["loaded"]


def test_main_threads_and_determinism(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path, SMALL)
    assert cli.main(["check", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    monkeypatch.setenv(cli.THREADS_ENV, "4")
    assert cli.main(["check", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    ha = json.loads((tmp_path / "a" / "report.json").read_text())["report_hash"]
    hb = json.loads((tmp_path / "b" / "report.json").read_text())["report_hash"]
    assert ha == hb
    out = capsys.readouterr().out
    assert out.count(f"report_hash={ha}") == 2


def test_main_config_error_exit(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.replace("convexity", "convexxity"))
    assert cli.main(["check", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "checks[2]" in capsys.readouterr().err


def test_seed_flag_changes_hash_only_through_seed(tmp_path):
    cfg = parse_config(SMALL)
    a, _ = cli.run(cfg, "check", out=tmp_path / "a", seed=1)
    b, _ = cli.run(cfg, "check", out=tmp_path / "b", seed=2)
    assert a["seed"] == 1 and b["seed"] == 2
    assert a["report_hash"] != b["report_hash"]
