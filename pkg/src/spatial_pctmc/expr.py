"""Rate expression trees.

A rate is a small arithmetic tree over real constants, named parameters and
population references ``agent@location``.  Trees are immutable and hashable so
that they can be shared between a model and its reductions.

Population references store ``(agent, location)`` indices; the flat position
in a state vector is ``location * n_agents + agent`` (location-major, matching
``X = (X@l1, ..., X@ll)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Union

from .errors import EvaluationError, UnsupportedRate

BINARY_OPS = ("+", "-", "*", "/", "min", "max")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Pop:
    agent: int
    location: int


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "RateExpr"
    right: "RateExpr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown operator {self.op!r}")


RateExpr = Union[Const, Param, Pop, BinOp]


# small constructors used by generators and tests
def const(v: float) -> Const:
    return Const(float(v))


def add(a: RateExpr, b: RateExpr) -> BinOp:
    return BinOp("+", a, b)


def sub(a: RateExpr, b: RateExpr) -> BinOp:
    return BinOp("-", a, b)


def mul(*factors: RateExpr) -> RateExpr:
    out = factors[0]
    for f in factors[1:]:
        out = BinOp("*", out, f)
    return out


def div(a: RateExpr, b: RateExpr) -> BinOp:
    return BinOp("/", a, b)


def total(terms: list[RateExpr]) -> RateExpr:
    """Left-folded symbolic sum; adjacent constants are folded."""
    out = terms[0]
    for t in terms[1:]:
        if isinstance(out, Const) and isinstance(t, Const):
            out = Const(out.value + t.value)
        else:
            out = BinOp("+", out, t)
    return out


def evaluate(expr: RateExpr, x, params: Mapping[str, float], n_agents: int) -> float:
    """Raw (unclamped) value of ``expr`` on state ``x``.

    Raises EvaluationError on a zero denominator and KeyError on an unknown
    parameter.
    """
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Param):
        return float(params[expr.name])
    if isinstance(expr, Pop):
        return float(x[expr.location * n_agents + expr.agent])
    a = evaluate(expr.left, x, params, n_agents)
    b = evaluate(expr.right, x, params, n_agents)
    op = expr.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise EvaluationError("division by zero")
        return a / b
    if op == "min":
        return min(a, b)
    return max(a, b)


def populations(expr: RateExpr) -> set[tuple[int, int]]:
    """All ``(agent, location)`` pairs referenced by ``expr``."""
    if isinstance(expr, Pop):
        return {(expr.agent, expr.location)}
    if isinstance(expr, BinOp):
        return populations(expr.left) | populations(expr.right)
    return set()


def parameters(expr: RateExpr) -> set[str]:
    if isinstance(expr, Param):
        return {expr.name}
    if isinstance(expr, BinOp):
        return parameters(expr.left) | parameters(expr.right)
    return set()


def substitute(expr: RateExpr, fn: Callable[[Pop], RateExpr]) -> RateExpr:
    """Replace every population reference by ``fn(ref)``."""
    if isinstance(expr, Pop):
        return fn(expr)
    if isinstance(expr, BinOp):
        return BinOp(expr.op, substitute(expr.left, fn), substitute(expr.right, fn))
    return expr


def depth(expr: RateExpr) -> int:
    if isinstance(expr, BinOp):
        return 1 + max(depth(expr.left), depth(expr.right))
    return 1


# ---------------------------------------------------------------------------
# polynomial view (used by moment closure)

Monomial = tuple  # sorted tuple of flat population indices; () is the constant


def _poly_mul(p: dict, q: dict) -> dict:
    out: dict = {}
    for mp, cp in p.items():
        for mq, cq in q.items():
            m = tuple(sorted(mp + mq))
            out[m] = out.get(m, 0.0) + cp * cq
    return out


def _poly_add(p: dict, q: dict, sign: float = 1.0) -> dict:
    out = dict(p)
    for m, c in q.items():
        out[m] = out.get(m, 0.0) + sign * c
    return out


def as_polynomial(expr: RateExpr, params: Mapping[str, float], n_agents: int,
                  max_degree: int = 2) -> dict:
    """Expand ``expr`` into ``{monomial: coefficient}``.

    Only sums, differences, products and division by constant subtrees are
    accepted.  ``min``/``max``, division by a population-dependent term, and
    total degree above ``max_degree`` raise UnsupportedRate.
    """
    poly = _expand(expr, params, n_agents)
    poly = {m: c for m, c in poly.items() if c != 0.0}
    for m in poly:
        if len(m) > max_degree:
            raise UnsupportedRate(f"rate has degree {len(m)} > {max_degree}")
    return poly


def _expand(expr: RateExpr, params, n_agents: int) -> dict:
    if isinstance(expr, Const):
        return {(): expr.value}
    if isinstance(expr, Param):
        return {(): float(params[expr.name])}
    if isinstance(expr, Pop):
        return {(expr.location * n_agents + expr.agent,): 1.0}
    op = expr.op
    if op in ("min", "max"):
        raise UnsupportedRate(f"'{op}' is not polynomial")
    left = _expand(expr.left, params, n_agents)
    right = _expand(expr.right, params, n_agents)
    if op == "+":
        return _poly_add(left, right)
    if op == "-":
        return _poly_add(left, right, -1.0)
    if op == "*":
        return _poly_mul(left, right)
    # quotient: denominator must be a nonzero constant
    if set(right) - {()}:
        raise UnsupportedRate("division by a population-dependent term")
    d = right.get((), 0.0)
    if d == 0.0:
        raise EvaluationError("division by zero")
    return {m: c / d for m, c in left.items()}


def format_expr(expr: RateExpr, agent_labels, location_labels) -> str:
    """Render in ``.spm`` syntax (fully parenthesised binary nodes)."""
    if isinstance(expr, Const):
        v = expr.value
        if math.isinf(v) or math.isnan(v):
            raise ValueError("non-finite constant")
        return repr(v) if v >= 0 else f"({repr(v)})"
    if isinstance(expr, Param):
        return expr.name
    if isinstance(expr, Pop):
        return f"{agent_labels[expr.agent]}@{location_labels[expr.location]}"
    a = format_expr(expr.left, agent_labels, location_labels)
    b = format_expr(expr.right, agent_labels, location_labels)
    if expr.op in ("min", "max"):
        return f"{expr.op}({a}, {b})"
    return f"({a} {expr.op} {b})"
