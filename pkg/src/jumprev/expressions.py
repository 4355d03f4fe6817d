"""Small closed-form expression grammar for configs.

Rates, drifts and tilts can be given as strings like ``"2.0"``,
``"1 + t"`` or ``"exp(-abs(y0 - x0))"``.  The grammar is a whitelisted
subset of Python expressions: numbers, the variables listed below,
arithmetic (+ - * / ** and unary minus), and the functions
exp, log, sqrt, abs, min, max, pow, sin, cos plus constants pi and e.

Variables by context (aliases for the first coordinate in parentheses):
    t                 time
    x0..x7 (x)        current state
    y0..y7 (y)        landing state, for tilts
    xi0..xi7 (xi)     jump displacement, for density kernels

Anything else is rejected at parse time, so config files cannot execute
arbitrary code.
"""

from __future__ import annotations

import ast
import math

_FUNCTIONS = {
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
    "min": min,
    "max": max,
    "pow": pow,
    "sin": math.sin,
    "cos": math.cos,
}

_CONSTANTS = {"pi": math.pi, "e": math.e}

_MAXDIM = 8

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_ALLOWED_UNARY = (ast.USub, ast.UAdd)


def _allowed_names(n_x: int, n_y: int, n_xi: int) -> set[str]:
    names = {"t"} | set(_CONSTANTS)
    if n_x:
        names |= {f"x{i}" for i in range(n_x)} | {"x"}
    if n_y:
        names |= {f"y{i}" for i in range(n_y)} | {"y"}
    if n_xi:
        names |= {f"xi{i}" for i in range(n_xi)} | {"xi"}
    return names


def _validate(node: ast.AST, names: set[str]) -> None:
    if isinstance(node, ast.Expression):
        _validate(node.body, names)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ValueError(f"non-numeric constant {node.value!r}")
    elif isinstance(node, ast.Name):
        if node.id not in names:
            raise ValueError(f"unknown variable {node.id!r}")
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _ALLOWED_BINOPS):
            raise ValueError(f"operator {type(node.op).__name__} not allowed")
        _validate(node.left, names)
        _validate(node.right, names)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _ALLOWED_UNARY):
            raise ValueError(f"operator {type(node.op).__name__} not allowed")
        _validate(node.operand, names)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ValueError("only exp/log/sqrt/abs/min/max/pow/sin/cos calls allowed")
        if node.keywords:
            raise ValueError("keyword arguments not allowed")
        for arg in node.args:
            _validate(arg, names)
    else:
        raise ValueError(f"syntax {type(node).__name__} not allowed in expressions")


def compile_expression(text: str, *, n_x: int = _MAXDIM, n_y: int = 0, n_xi: int = 0):
    """Compile an expression string to ``f(t, x=None, y=None, xi=None) -> float``.

    x, y, xi are indexable coordinate sequences; scalar aliases x/y/xi map
    to the first coordinate.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from exc
    names = _allowed_names(n_x, n_y, n_xi)
    _validate(tree, names)
    code = compile(tree, f"<expr {text!r}>", "eval")
    used = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} - set(_FUNCTIONS) - set(_CONSTANTS)
    env = dict(_FUNCTIONS)
    env.update(_CONSTANTS)

    def evaluate(t, x=None, y=None, xi=None):
        scope = dict(env)
        scope["t"] = t
        for prefix, vec in (("x", x), ("y", y), ("xi", xi)):
            if vec is None:
                continue
            for i, v in enumerate(vec):
                scope[f"{prefix}{i}"] = float(v)
            scope[prefix] = float(vec[0])
        try:
            return float(eval(code, {"__builtins__": {}}, scope))  # noqa: S307 - whitelisted AST
        except NameError as exc:
            raise ValueError(f"expression {text!r}: {exc}") from exc

    evaluate.expression = text
    evaluate.variables = used
    return evaluate


def mirror_xi_expression(text: str) -> str:
    """Rewrite an expression in xi so it evaluates the original at -xi.

    Used by the Levy mirror: a density k(xi) becomes k(-xi).
    """
    tree = ast.parse(text, mode="eval")

    def _is_xi(node):
        return isinstance(node, ast.Name) and (
            node.id == "xi" or (node.id.startswith("xi") and node.id[2:].isdigit()))

    class Flip(ast.NodeTransformer):
        def visit_UnaryOp(self, node):  # noqa: N802 - ast API
            if isinstance(node.op, ast.USub) and _is_xi(node.operand):
                return node.operand          # -(-xi) collapses back to xi
            return self.generic_visit(node)

        def visit_Name(self, node):  # noqa: N802 - ast API
            if _is_xi(node):
                return ast.UnaryOp(op=ast.USub(), operand=node)
            return node

    flipped = Flip().visit(tree)
    ast.fix_missing_locations(flipped)
    return ast.unparse(flipped)
