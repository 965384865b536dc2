"""Tiny vectorised expression language for boundary data and graph charts.

Grammar: numbers, coordinate symbols ``x1 .. xn`` (also ``x, y, z``), ``pi``,
``+ - * / **``, unary minus, and the functions below.  Anything else is
rejected before evaluation.
"""

from __future__ import annotations

import ast

import numpy as np

from .errors import ConfigError

_FUNCS = {
    "abs": np.abs,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "atan2": np.arctan2,
    "min": np.minimum,
    "max": np.maximum,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_ALIASES = {"x": "x1", "y": "x2", "z": "x3"}


class Expression:
    """A parsed expression over coordinate symbols."""

    def __init__(self, source: str):
        self.source = str(source)
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {self.source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ConfigError(f"non-numeric literal in {self.source!r}")
        elif isinstance(node, ast.Name):
            name = _ALIASES.get(node.id, node.id)
            if name not in _CONSTS and not (name[0] == "x" and name[1:].isdigit()):
                raise ConfigError(f"unknown symbol {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.BinOp):
            if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
                raise ConfigError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ConfigError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ConfigError(f"function not allowed in {self.source!r}")
            for a in node.args:
                self._check(a)
        else:
            raise ConfigError(f"construct {type(node).__name__} not allowed in {self.source!r}")

    def __call__(self, coords):
        """Evaluate on an array of points with coordinates in the last axis."""
        coords = np.asarray(coords, dtype=float)
        return np.broadcast_to(self._eval(self._tree, coords), coords.shape[:-1]).astype(float)

    def _eval(self, node, X):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            name = _ALIASES.get(node.id, node.id)
            if name in _CONSTS:
                return _CONSTS[name]
            i = int(name[1:]) - 1
            if not 0 <= i < X.shape[-1]:
                raise ConfigError(f"symbol {node.id!r} exceeds dimension {X.shape[-1]}")
            return X[..., i]
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, X)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            a, b = self._eval(node.left, X), self._eval(node.right, X)
            op = node.op
            if isinstance(op, ast.Add):
                return a + b
            if isinstance(op, ast.Sub):
                return a - b
            if isinstance(op, ast.Mult):
                return a * b
            if isinstance(op, ast.Div):
                return a / b
            return np.power(a, b)
        args = [self._eval(a, X) for a in node.args]
        return _FUNCS[node.func.id](*args)

    def __repr__(self):
        return f"Expression({self.source!r})"
