"""Tiny arithmetic-expression language for scalar fields in config files.

Grammar (python-like precedence, ``**``/``^`` right-associative and tighter
than unary minus):

    expr   := term (("+"|"-") term)*
    term   := unary (("*"|"/") unary)*
    unary  := ("+"|"-") unary | power
    power  := atom ["**" unary]
    atom   := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")"

Variables are ``x1 .. xn``; ``pi`` is a constant; ``sin``, ``cos``, ``exp``,
``sqrt`` and ``abs`` are available.  Expressions evaluate vectorized over
point arrays ``(..., n)`` and differentiate symbolically, so parsed fields
come with exact gradients.
"""

from __future__ import annotations

import re
from typing import List, Tuple

import numpy as np

from .errors import SchemaError

__all__ = ["parse_expression", "evaluate", "gradient_ast", "field_from_expression"]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/()^]))"
)

_FUNCS = {
    "sin": (np.sin, lambda a: ("call", "cos", a)),
    "cos": (np.cos, lambda a: ("neg", ("call", "sin", a))),
    "exp": (np.exp, lambda a: ("call", "exp", a)),
    "sqrt": (np.sqrt, lambda a: ("div", ("num", 0.5), ("call", "sqrt", a))),
    "abs": (np.abs, None),  # not differentiable at 0; rejected in gradients
}


def _tokenize(src: str) -> List[Tuple[str, str]]:
    out, pos = [], 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            raise SchemaError(f"bad character in expression at offset {pos}: "
                              f"{src[pos:pos + 8]!r}")
        pos = m.end()
        for kind in ("num", "name", "op"):
            if m.group(kind) is not None:
                out.append((kind, m.group(kind)))
                break
    out.append(("end", ""))
    return out


class _Parser:
    def __init__(self, tokens, dim):
        self.toks = tokens
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, value=None):
        k, v = self.toks[self.i]
        if (kind and k != kind) or (value and v != value):
            raise SchemaError(f"expected {value or kind}, got {v!r}")
        self.i += 1
        return v

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.take("op")
            node = ("add" if op == "+" else "sub", node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            op = self.take("op")
            node = ("mul" if op == "*" else "div", node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take("op")
            return ("neg", self.unary())
        if self.peek() == ("op", "+"):
            self.take("op")
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() in (("op", "**"), ("op", "^")):
            self.take("op")
            return ("pow", base, self.unary())
        return base

    def atom(self):
        kind, value = self.peek()
        if kind == "num":
            self.take()
            return ("num", float(value))
        if kind == "name":
            self.take()
            if value == "pi":
                return ("num", float(np.pi))
            if value in _FUNCS:
                self.take("op", "(")
                inner = self.expr()
                self.take("op", ")")
                return ("call", value, inner)
            m = re.fullmatch(r"x(\d+)", value)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= self.dim:
                    raise SchemaError(
                        f"variable {value} out of range for dimension {self.dim}"
                    )
                return ("var", idx - 1)
            raise SchemaError(f"unknown name {value!r}")
        if (kind, value) == ("op", "("):
            self.take()
            node = self.expr()
            self.take("op", ")")
            return node
        raise SchemaError(f"unexpected token {value!r}")


def parse_expression(src: str, dim: int):
    """Parse to an AST of nested tuples; raises SchemaError on bad input."""
    p = _Parser(_tokenize(src), dim)
    node = p.expr()
    p.take("end")
    return node


def evaluate(ast, points: np.ndarray):
    """Evaluate an AST on points of shape (..., n)."""
    op = ast[0]
    if op == "num":
        return np.full(points.shape[:-1], ast[1]) if points.ndim > 1 else ast[1]
    if op == "var":
        return points[..., ast[1]]
    if op == "neg":
        return -evaluate(ast[1], points)
    if op == "call":
        return _FUNCS[ast[1]][0](evaluate(ast[2], points))
    a = evaluate(ast[1], points)
    b = evaluate(ast[2], points)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    if op == "pow":
        return a ** b
    raise SchemaError(f"unknown AST node {op!r}")


def _is_const(ast):
    return ast[0] == "num"


def gradient_ast(ast, var: int):
    """Symbolic derivative with respect to variable index ``var``."""
    op = ast[0]
    if op == "num":
        return ("num", 0.0)
    if op == "var":
        return ("num", 1.0 if ast[1] == var else 0.0)
    if op == "neg":
        return ("neg", gradient_ast(ast[1], var))
    if op == "add" or op == "sub":
        return (op, gradient_ast(ast[1], var), gradient_ast(ast[2], var))
    if op == "mul":
        a, b = ast[1], ast[2]
        return ("add", ("mul", gradient_ast(a, var), b),
                ("mul", a, gradient_ast(b, var)))
    if op == "div":
        a, b = ast[1], ast[2]
        num = ("sub", ("mul", gradient_ast(a, var), b),
               ("mul", a, gradient_ast(b, var)))
        return ("div", num, ("mul", b, b))
    if op == "pow":
        base, expo = ast[1], ast[2]
        if not _is_const(expo):
            raise SchemaError("differentiation needs constant exponents")
        p = expo[1]
        return ("mul", ("num", p),
                ("mul", ("pow", base, ("num", p - 1.0)),
                 gradient_ast(base, var)))
    if op == "call":
        name, inner = ast[1], ast[2]
        rule = _FUNCS[name][1]
        if rule is None:
            raise SchemaError(f"{name}() is not differentiable here")
        outer = rule(inner)
        return ("mul", outer, gradient_ast(inner, var))
    raise SchemaError(f"unknown AST node {op!r}")


def simplify(ast):
    """Constant-fold an AST; mops up the x*0 / x+0 debris of the chain rule."""
    op = ast[0]
    if op in ("num", "var"):
        return ast
    if op == "neg":
        a = simplify(ast[1])
        return ("num", -a[1]) if a[0] == "num" else ("neg", a)
    if op == "call":
        a = simplify(ast[2])
        if a[0] == "num":
            return ("num", float(_FUNCS[ast[1]][0](a[1])))
        return ("call", ast[1], a)
    a, b = simplify(ast[1]), simplify(ast[2])
    ca, cb = a[0] == "num", b[0] == "num"
    if ca and cb:
        return ("num", float(evaluate((op, a, b), np.zeros(1))))
    if op == "add":
        if ca and a[1] == 0.0:
            return b
        if cb and b[1] == 0.0:
            return a
    elif op == "sub":
        if cb and b[1] == 0.0:
            return a
    elif op == "mul":
        if (ca and a[1] == 0.0) or (cb and b[1] == 0.0):
            return ("num", 0.0)
        if ca and a[1] == 1.0:
            return b
        if cb and b[1] == 1.0:
            return a
    elif op == "div":
        if ca and a[1] == 0.0:
            return ("num", 0.0)
        if cb and b[1] == 1.0:
            return a
    elif op == "pow":
        if cb and b[1] == 1.0:
            return a
        if cb and b[1] == 0.0:
            return ("num", 1.0)
    return (op, a, b)


_OP_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def _source(ast) -> str:
    op = ast[0]
    if op == "num":
        return repr(float(ast[1]))
    if op == "var":
        return f"x{ast[1] + 1}"
    if op == "neg":
        return f"(-{_source(ast[1])})"
    if op == "call":
        return f"np.{ast[1]}({_source(ast[2])})"
    if op == "pow":
        return f"({_source(ast[1])} ** {_source(ast[2])})"
    return f"({_source(ast[1])} {_OP_SYMBOLS[op]} {_source(ast[2])})"


def compile_ast(ast, dim: int):
    """Compile an AST to one vectorized numpy closure, (..., n) -> (...).

    Much faster than the tree-walking ``evaluate`` when called per
    integration step; ``evaluate`` stays as the reference semantics.
    """
    folded = simplify(ast)
    args = ", ".join(f"x{i + 1}" for i in range(dim))
    raw = eval(f"lambda {args}: {_source(folded)}", {"np": np})
    is_const = folded[0] == "num"

    def value(points):
        p = np.asarray(points, dtype=float)
        out = raw(*(p[..., i] for i in range(dim)))
        if is_const:
            out = np.full(p.shape[:-1], out) if p.ndim > 1 else float(out)
        return out

    return value


def field_from_expression(src: str, dim: int, name: str = ""):
    """Build a ScalarField (value + exact gradient) from an expression."""
    from .certification import ScalarField

    ast = parse_expression(src, dim)
    val = compile_ast(ast, dim)
    grads = [compile_ast(gradient_ast(ast, i), dim) for i in range(dim)]

    def value(points):
        return val(points)

    def gradient(points):
        p = np.asarray(points, dtype=float)
        out = np.empty(p.shape[:-1] + (dim,))
        for i, g in enumerate(grads):
            out[..., i] = g(p)
        return out

    return ScalarField(name=name or src, value=value, gradient=gradient,
                       description=f"parsed from {src!r}")
