"""Experiment configuration (YAML) with field and line diagnostics."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, NPCError
from .expr import Expression
from .grid import GridDomain, build_grid
from .io import read_boundary_table
from .solver import SolverConfig, tripod_arc_boundary
from .targets import Hyperbolic, TargetSpace, Tree, space_from_descriptor

CHECKS = ("holder", "caccioppoli", "rhi", "gehring", "poincare", "boundary", "parallelogram", "convexity",
          "quasiratio")
TOP_KEYS = ("domain", "resolution", "spacing", "target", "boundary", "solver", "checks", "options", "output",
            "seed")
SOLVER_KEYS = ("p", "max_sweeps", "tol_rel_energy", "tol_step", "relaxation", "damping", "order", "multilevel")
BOUNDARY_PRESETS = ("tripod_arcs",)


def _line_index(node, prefix="", out=None):
    """Map dotted field paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_index(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            key = f"{prefix}[{i}]"
            out[key] = v.start_mark.line + 1
            _line_index(v, key, out)
    return out


@dataclass
class ExperimentConfig:
    domain: dict
    resolution: object
    spacing: float
    target: dict
    boundary: dict
    solver: SolverConfig
    checks: list
    options: dict
    output: str
    seed: int
    source: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict, repr=False)

    def echo(self) -> dict:
        return json.loads(json.dumps(self.raw, sort_keys=True, default=str))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.echo(), sort_keys=True).encode()).hexdigest()

    def build_grid(self) -> GridDomain:
        return build_grid(self.domain, self.resolution, self.spacing)

    def build_space(self) -> TargetSpace:
        return space_from_descriptor(self.target)

    def boundary_values(self, grid: GridDomain, space: TargetSpace):
        """Full-grid payload array holding the boundary data (values elsewhere unused)."""
        b = self.boundary
        if "preset" in b:
            return tripod_arc_boundary(space, grid)
        if "table" in b:
            return read_boundary_table(self.base_dir / b["table"], grid, space.payload_dim)
        return expression_payload(b["expression"], grid, space)


def expression_payload(exprs, grid: GridDomain, space: TargetSpace):
    exprs = [exprs] if isinstance(exprs, str) else list(exprs)
    k = space.payload_dim
    X = grid.physical_coords()
    vals = [np.broadcast_to(Expression(e)(X), grid.shape) for e in exprs]
    if isinstance(space, Hyperbolic) and len(vals) == 2:
        vals = [np.zeros(grid.shape)] + vals
    if len(vals) != k:
        raise ConfigError(f"boundary needs {k} expressions for target {space.kind}, got {len(vals)}",
                          field="boundary.expression")
    out = np.stack(vals, axis=-1).astype(float)
    if isinstance(space, Tree):
        e = np.clip(np.rint(out[..., 0]), 0, len(space.edges) - 1)
        out = np.stack([e, np.clip(out[..., 1], 0.0, space.lengths[e.astype(int)])], axis=-1)
    return space.normalize(out)


def _default_spacing(domain, resolution):
    kind = domain.get("kind", "cube")
    res = np.atleast_1d(resolution)
    if kind == "cube":
        return float(domain.get("side", 1.0)) / (int(res[0]) - 1)
    return 2.0 * float(domain.get("radius", 1.0)) / (int(res[0]) - 1)


def parse_config(text: str, source=None, base_dir=None) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"YAML syntax error: {exc.problem}", line=mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping", line=1)
    lines = _line_index(node)

    def fail(msg, key):
        raise ConfigError(msg, field=key, line=lines.get(key))

    for key in data:
        if key not in TOP_KEYS:
            fail(f"unknown key {key!r}", str(key))
    for key in ("domain", "resolution", "target", "boundary"):
        if key not in data:
            raise ConfigError(f"missing required key {key!r}", field=key)

    domain = data["domain"]
    if isinstance(domain, str):
        domain = {"kind": domain}
    if not isinstance(domain, dict) or domain.get("kind") not in ("cube", "ball", "half_ball", "graph"):
        fail("domain kind must be one of cube, ball, half_ball, graph", "domain")
    resolution = data["resolution"]
    try:
        res_arr = np.atleast_1d(np.asarray(resolution, dtype=int))
    except (TypeError, ValueError):
        fail("resolution must be an integer or a list of integers", "resolution")
    if np.any(res_arr < 3):
        fail("resolution must be at least 3 vertices per axis", "resolution")
    spacing = data.get("spacing")
    if spacing is None:
        spacing = _default_spacing(domain, resolution)
    try:
        spacing = float(spacing)
    except (TypeError, ValueError):
        fail("spacing must be a number", "spacing")
    if not spacing > 0:
        fail("spacing must be positive", "spacing")

    target = data["target"]
    if isinstance(target, str):
        target = {"kind": target}
    try:
        space_from_descriptor(target)
    except (NPCError, KeyError, TypeError, ValueError) as exc:
        fail(f"invalid target: {exc}", "target")

    bnd = data["boundary"]
    if isinstance(bnd, str):
        bnd = {"expression": bnd}
    if not isinstance(bnd, dict) or len(set(bnd) & {"expression", "preset", "table"}) != 1:
        fail("boundary needs exactly one of expression, preset, table", "boundary")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if "expression" in bnd:
        exprs = [bnd["expression"]] if isinstance(bnd["expression"], str) else bnd["expression"]
        for i, e in enumerate(exprs):
            try:
                Expression(str(e))
            except ConfigError as exc:
                key = "boundary.expression" if isinstance(bnd["expression"], str) else f"boundary.expression[{i}]"
                fail(str(exc), key)
    elif "preset" in bnd and bnd["preset"] not in BOUNDARY_PRESETS:
        fail(f"unknown boundary preset {bnd['preset']!r}", "boundary.preset")
    elif "table" in bnd and not (base / str(bnd["table"])).is_file():
        fail(f"boundary table {bnd['table']!r} not found", "boundary.table")

    scfg = data.get("solver") or {}
    if not isinstance(scfg, dict):
        fail("solver must be a mapping", "solver")
    for k in scfg:
        if k not in SOLVER_KEYS:
            fail(f"unknown solver option {k!r}", f"solver.{k}")
    try:
        solver = SolverConfig(**scfg)
    except (NPCError, TypeError) as exc:
        fail(f"invalid solver settings: {exc}", "solver")

    checks = data.get("checks") or []
    if not isinstance(checks, list):
        fail("checks must be a list", "checks")
    for i, c in enumerate(checks):
        if c not in CHECKS:
            fail(f"unknown check {c!r}; expected one of {', '.join(CHECKS)}", f"checks[{i}]")
    options = data.get("options") or {}
    if not isinstance(options, dict):
        fail("options must be a mapping", "options")
    for k in options:
        if k not in CHECKS:
            fail(f"options for unknown check {k!r}", f"options.{k}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        fail("seed must be an integer", "seed")

    return ExperimentConfig(
        domain=dict(domain),
        resolution=resolution,
        spacing=spacing,
        target=dict(target),
        boundary=dict(bnd),
        solver=solver,
        checks=list(checks),
        options=dict(options),
        output=str(data.get("output", "out")),
        seed=int(seed),
        source=str(source) if source else None,
        base_dir=base,
        raw=data,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text(), source=path, base_dir=path.parent)
