"""JIT-compiled inner loops: rate bytecode interpreter and the direct-method SSA.

Rates are stored as postfix bytecode, one program per transition:
``ops[ptr[j]:ptr[j+1]]`` with operands in ``args``.  A program never touches
the Python object graph, so the kernels release the GIL.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_MIN = 6
OP_MAX = 7

# status codes returned by kernels (> 0 means "division by zero in transition status-1")
OK = 0


@njit(nogil=True, cache=True)
def raw_rate(j, ops, args, consts, ptr, x, stack):
    """Evaluate program ``j`` on state ``x``. Returns (value, ok)."""
    sp = 0
    ok = True
    for pc in range(ptr[j], ptr[j + 1]):
        op = ops[pc]
        if op == OP_CONST:
            stack[sp] = consts[args[pc]]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = x[args[pc]]
            sp += 1
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == OP_ADD:
                r = a + b
            elif op == OP_SUB:
                r = a - b
            elif op == OP_MUL:
                r = a * b
            elif op == OP_DIV:
                # a zero denominator poisons the result; reported after the loop
                if b == 0.0:
                    ok = False
                    r = 0.0
                else:
                    r = a / b
            elif op == OP_MIN:
                r = min(a, b)
            else:
                r = max(a, b)
            stack[sp - 1] = r
    return stack[0], ok


@njit(nogil=True, cache=True)
def blocked(j, x, up_ptr, up_idx, up_val):
    """True if firing transition ``j`` would make some count negative."""
    b = False
    for q in range(up_ptr[j], up_ptr[j + 1]):
        b |= x[up_idx[q]] + up_val[q] < 0
    return b


@njit(nogil=True, cache=True)
def guarded_rate(j, x, ops, args, consts, ptr, up_ptr, up_idx, up_val, stack, negflag):
    """SSA propensity: 0 if firing would make a count negative, else max(0, rate)."""
    # evaluate first and compute the guard branch-free; early exits here cost ~3x per event
    v, ok = raw_rate(j, ops, args, consts, ptr, x, stack)
    if blocked(j, x, up_ptr, up_idx, up_val):
        v = 0.0
        ok = True
    if not ok:
        v = 0.0
    if v < 0.0:
        negflag[j] = 1
        v = 0.0
    return v, ok


@njit(nogil=True, cache=True)
def all_rates(x, ops, args, consts, ptr, out, negflag, stack):
    """Clamped rates on a real state (no population guard). Returns status."""
    m = ptr.shape[0] - 1
    for j in range(m):
        v, ok = raw_rate(j, ops, args, consts, ptr, x, stack)
        if not ok:
            return j + 1
        if v < 0.0:
            negflag[j] = 1
            v = 0.0
        out[j] = v
    return OK


@njit(nogil=True, cache=True)
def ssa_run(x0, grid, t_end, ops, args, consts, ptr, up_ptr, up_idx, up_val,
            dep_ptr, dep_idx, rng, out, negflag, stack_size):
    """One direct-method trajectory; fills ``out[g, :]`` with the state at grid[g].

    Returns (status, time, n_events).
    """
    m = ptr.shape[0] - 1
    x = x0.copy()
    stack = np.empty(stack_size)
    rates = np.empty(m)
    status = OK
    for j in range(m):
        v, ok = guarded_rate(j, x, ops, args, consts, ptr, up_ptr, up_idx, up_val, stack, negflag)
        if not ok and status == OK:
            status = j + 1
        rates[j] = v
    n_grid = grid.shape[0]
    g = 0
    t = 0.0
    events = 0
    while status == OK:
        total = 0.0
        for j in range(m):
            total += rates[j]
        if total <= 0.0:
            break
        t_next = t + rng.standard_exponential() / total
        while g < n_grid and grid[g] < t_next:
            out[g, :] = x
            g += 1
        if t_next > t_end:
            break
        u = rng.random() * total
        acc = 0.0
        chosen = -1
        for j in range(m):
            if rates[j] > 0.0:
                acc += rates[j]
                chosen = j
                if u < acc:
                    break
        for q in range(up_ptr[chosen], up_ptr[chosen + 1]):
            x[up_idx[q]] += up_val[q]
        t = t_next
        events += 1
        for q in range(up_ptr[chosen], up_ptr[chosen + 1]):
            sidx = up_idx[q]
            for r in range(dep_ptr[sidx], dep_ptr[sidx + 1]):
                # a rate reached twice is simply recomputed; skipping it costs more
                k = dep_idx[r]
                v, ok = raw_rate(k, ops, args, consts, ptr, x, stack)
                if blocked(k, x, up_ptr, up_idx, up_val):
                    v = 0.0
                    ok = True
                if not ok and status == OK:
                    status = k + 1
                if v < 0.0:
                    negflag[k] = 1
                    v = 0.0
                rates[k] = v
    if status == OK:
        while g < n_grid:
            out[g, :] = x
            g += 1
    return status, t, events


@njit(nogil=True, cache=True)
def sample_jumps(x, n, ops, args, consts, ptr, up_ptr, up_idx, up_val, rng, stack_size):
    """Draw ``n`` independent single SSA steps from state ``x``.

    Returns (sum_dx, sum_dx2, sum_dt, sum_dt2, sum_dtdx, status).
    """
    m = ptr.shape[0] - 1
    N = x.shape[0]
    stack = np.empty(stack_size)
    negflag = np.zeros(m, dtype=np.int8)
    rates = np.empty(m)
    sdx = np.zeros(N)
    sdx2 = np.zeros(N)
    sdtdx = np.zeros(N)
    sdt = 0.0
    sdt2 = 0.0
    for j in range(m):
        v, ok = guarded_rate(j, x, ops, args, consts, ptr, up_ptr, up_idx, up_val, stack, negflag)
        if not ok:
            return sdx, sdx2, sdt, sdt2, sdtdx, j + 1
        rates[j] = v
    total = 0.0
    for j in range(m):
        total += rates[j]
    if total <= 0.0:
        return sdx, sdx2, sdt, sdt2, sdtdx, OK
    for _ in range(n):
        dt = rng.standard_exponential() / total
        u = rng.random() * total
        acc = 0.0
        chosen = -1
        for j in range(m):
            if rates[j] > 0.0:
                acc += rates[j]
                chosen = j
                if u < acc:
                    break
        sdt += dt
        sdt2 += dt * dt
        for q in range(up_ptr[chosen], up_ptr[chosen + 1]):
            s = up_idx[q]
            d = float(up_val[q])
            sdx[s] += d
            sdx2[s] += d * d
            sdtdx[s] += dt * d
    return sdx, sdx2, sdt, sdt2, sdtdx, OK


@njit(nogil=True, cache=True)
def moment_drift(y, n, tri, c0, l_ptr, l_col, l_val, q_ptr, q_a, q_b, q_c,
                 d_ptr, d_idx, d_val, out):
    """Closed second-moment drift, written into ``out``.

    ``tri[i, j]`` is the packed position of ``M_ij``; linear terms are CSR by
    transition (``l_*``), quadratic monomials grouped by transition (``q_*``)
    and the change vectors CSR by transition (``d_*``).
    """
    mu = y[:n]
    M = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            M[i, j] = y[tri[i, j]]
            M[j, i] = M[i, j]
    E = np.zeros((n, n))  # E[i, :] = sum_tau D_tau,i E[X r_tau]
    out[:] = 0.0
    row = np.empty(n)
    for t in range(len(c0)):
        er = c0[t]
        w = c0[t]
        for c in range(n):
            row[c] = 0.0
        for p in range(l_ptr[t], l_ptr[t + 1]):
            col = l_col[p]
            v = l_val[p]
            er += v * mu[col]
            for c in range(n):
                row[c] += v * M[col, c]
        for p in range(q_ptr[t], q_ptr[t + 1]):
            a = q_a[p]
            b = q_b[p]
            v = q_c[p]
            er += v * M[a, b]
            w += v * (M[a, b] - 2.0 * mu[a] * mu[b])
            ca = v * mu[a]
            cb = v * mu[b]
            for c in range(n):
                row[c] += ca * M[b, c] + cb * M[a, c]
        for c in range(n):
            row[c] += w * mu[c]
        for p in range(d_ptr[t], d_ptr[t + 1]):
            i = d_idx[p]
            d = d_val[p]
            out[i] += d * er
            for c in range(n):
                E[i, c] += d * row[c]
            for q in range(d_ptr[t], d_ptr[t + 1]):
                k = d_idx[q]
                if i <= k:
                    out[tri[i, k]] += d * d_val[q] * er
    for i in range(n):
        for j in range(i, n):
            out[tri[i, j]] += E[i, j] + E[j, i]
    return out
