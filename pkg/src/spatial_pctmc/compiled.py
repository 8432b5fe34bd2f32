"""Lowering of a SpatialModel into flat arrays consumed by the JIT kernels."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from . import expr as ex
from .errors import EvaluationError, UnsupportedRate
from .model import SpatialModel

log = logging.getLogger(__name__)

_OPCODES = {"+": K.OP_ADD, "-": K.OP_SUB, "*": K.OP_MUL, "/": K.OP_DIV,
            "min": K.OP_MIN, "max": K.OP_MAX}


def _emit(node: ex.RateExpr, params, n_agents, ops, args, consts) -> None:
    if isinstance(node, ex.Const) or isinstance(node, ex.Param):
        value = node.value if isinstance(node, ex.Const) else float(params[node.name])
        ops.append(K.OP_CONST)
        args.append(len(consts))
        consts.append(value)
    elif isinstance(node, ex.Pop):
        ops.append(K.OP_VAR)
        args.append(node.location * n_agents + node.agent)
    else:
        _emit(node.left, params, n_agents, ops, args, consts)
        _emit(node.right, params, n_agents, ops, args, consts)
        ops.append(_OPCODES[node.op])
        args.append(0)


def _emit_polynomial(poly: dict, ops, args, consts) -> None:
    """Sum of ``coef * x_i * x_j ...`` terms, left-folded."""
    terms = sorted(poly.items()) or [((), 0.0)]
    for i, (mono, coef) in enumerate(terms):
        ops.append(K.OP_CONST)
        args.append(len(consts))
        consts.append(coef)
        for s in mono:
            ops.append(K.OP_VAR)
            args.append(s)
            ops.append(K.OP_MUL)
            args.append(0)
        if i:
            ops.append(K.OP_ADD)
            args.append(0)


def _emit_rate(rate: ex.RateExpr, params, n_agents, ops, args, consts) -> None:
    """Emit the shorter of the literal program and its expanded polynomial.

    Merged rates of reduced models are long sums of similar products; their
    expanded form collects coefficients per monomial and evaluates much faster.
    """
    lit_ops: list[int] = []
    lit_args: list[int] = []
    lit_consts: list[float] = []
    _emit(rate, params, n_agents, lit_ops, lit_args, lit_consts)
    try:
        poly = ex.as_polynomial(rate, params, n_agents, max_degree=4)
    except (UnsupportedRate, EvaluationError):
        poly = None
    if poly is not None:
        size = sum(1 + 2 * len(m) for m in poly) + max(len(poly) - 1, 0)
        if size < len(lit_ops):
            _emit_polynomial(poly, ops, args, consts)
            return
    base = len(consts)
    ops.extend(lit_ops)
    args.extend(a + base if o == K.OP_CONST else a for o, a in zip(lit_ops, lit_args))
    consts.extend(lit_consts)


@dataclass(frozen=True)
class CompiledModel:
    labels: tuple[str, ...]
    size: int
    ops: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    ptr: np.ndarray
    up_ptr: np.ndarray
    up_idx: np.ndarray
    up_val: np.ndarray
    dep_ptr: np.ndarray
    dep_idx: np.ndarray
    stack_size: int
    D: sp.csr_matrix  # m x N update matrix

    @property
    def n_transitions(self) -> int:
        return len(self.labels)

    def rates(self, x: np.ndarray) -> np.ndarray:
        """Rates clamped at zero, without the population guard (mean-field semantics)."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(self.n_transitions)
        neg = np.zeros(self.n_transitions, dtype=np.int8)
        stack = np.empty(self.stack_size)
        status = K.all_rates(x, self.ops, self.args, self.consts, self.ptr, out, neg, stack)
        if status:
            raise EvaluationError("division by zero", transition=self.labels[status - 1],
                                  state=x.copy())
        self.report_negative(neg)
        return out

    def report_negative(self, negflag: np.ndarray) -> None:
        for j in np.flatnonzero(negflag):
            key = (id(self), j)
            if key not in _WARNED:
                _WARNED.add(key)
                log.warning("rate of transition %r evaluated negative; clamped to 0",
                            self.labels[j])


_WARNED: set = set()


def compile_model(model: SpatialModel) -> CompiledModel:
    cached = model._cache.get("compiled")
    if cached is not None:
        return cached
    params = model.param_map
    n = model.n_agents
    N = model.size
    ops: list[int] = []
    args: list[int] = []
    consts: list[float] = []
    ptr = [0]
    up_ptr = [0]
    up_idx: list[int] = []
    up_val: list[int] = []
    deps: list[set[int]] = [set() for _ in range(N)]
    depth = 1
    for j, t in enumerate(model.transitions):
        _emit_rate(t.rate, params, n, ops, args, consts)
        ptr.append(len(ops))
        depth = max(depth, ex.depth(t.rate), 3)
        for a, loc in ex.populations(t.rate):
            deps[loc * n + a].add(j)
        for (a, loc), v in t.update:
            s = loc * n + a
            up_idx.append(s)
            up_val.append(v)
            if v < 0:
                deps[s].add(j)  # guard depends on this count
        up_ptr.append(len(up_idx))
    dep_ptr = np.zeros(N + 1, dtype=np.int64)
    dep_ptr[1:] = np.cumsum([len(d) for d in deps])
    dep_idx = np.fromiter((j for d in deps for j in sorted(d)), dtype=np.int64,
                          count=int(dep_ptr[-1]))
    m = len(model.transitions)
    rows = np.repeat(np.arange(m), np.diff(up_ptr))
    D = sp.csr_matrix((np.asarray(up_val, dtype=float), (rows, np.asarray(up_idx))), shape=(m, N))
    cm = CompiledModel(
        labels=tuple(t.label for t in model.transitions),
        size=N,
        ops=np.asarray(ops, dtype=np.int8),
        args=np.asarray(args, dtype=np.int64),
        consts=np.asarray(consts if consts else [0.0], dtype=np.float64),
        ptr=np.asarray(ptr, dtype=np.int64),
        up_ptr=np.asarray(up_ptr, dtype=np.int64),
        up_idx=np.asarray(up_idx, dtype=np.int64),
        up_val=np.asarray(up_val, dtype=np.int64),
        dep_ptr=dep_ptr,
        dep_idx=dep_idx,
        stack_size=depth + 1,
        D=D,
    )
    model._cache["compiled"] = cm
    return cm
