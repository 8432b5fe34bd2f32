"""Mean-field and second-order (normal closure) moment ODEs, integrated to equilibrium.

The moment state packs the means followed by the upper triangle (row-major,
``numpy.triu_indices`` order) of the raw second moments ``M_ij = E[X_i X_j]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import RK45, solve_ivp

from . import _kernels as K
from . import expr as ex
from .compiled import compile_model
from .errors import ConfigError, Divergence, EvaluationError, UnsupportedRate
from .model import SpatialModel

log = logging.getLogger(__name__)


class MeanFieldSystem:
    """dx/dt = sum_tau D_tau * max(0, r_tau(x))."""

    kind = "mean-field"

    def __init__(self, model: SpatialModel):
        self.model = model
        self.compiled = compile_model(model)
        self.Dt = self.compiled.D.T.tocsr()
        self.dim = model.size
        self.n = model.size

    def drift(self, x: np.ndarray) -> np.ndarray:
        try:
            r = self.compiled.rates(x)
        except EvaluationError as err:
            raise EvaluationError("division by zero in mean-field drift",
                                  transition=err.transition, state=np.array(x)) from err
        return self.Dt @ r

    def initial(self) -> np.ndarray:
        return self.model.initial_array().astype(float)

    def means(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y[: self.n])


class MomentSystem:
    """Means and raw second moments under the zero-third-cumulant closure.

    Every rate must be a polynomial of total degree <= 2 in the populations;
    third raw moments are replaced by
    ``E[XaXbXc] = mu_a M_bc + mu_b M_ac + mu_c M_ab - 2 mu_a mu_b mu_c``.
    """

    kind = "moment-closure"

    def __init__(self, model: SpatialModel):
        self.model = model
        N = model.size
        m = len(model.transitions)
        self.n = N
        self.dim = N + N * (N + 1) // 2
        self.iu = np.triu_indices(N)
        c0 = np.zeros(m)
        lin_r, lin_c, lin_v = [], [], []
        q_t, q_a, q_b, q_c = [], [], [], []
        for j, t in enumerate(model.transitions):
            try:
                poly = ex.as_polynomial(t.rate, model.param_map, model.n_agents)
            except UnsupportedRate as err:
                raise UnsupportedRate(f"transition {t.label!r}: {err}") from err
            for mono, c in poly.items():
                if len(mono) == 0:
                    c0[j] += c
                elif len(mono) == 1:
                    lin_r.append(j)
                    lin_c.append(mono[0])
                    lin_v.append(c)
                else:
                    q_t.append(j)
                    q_a.append(mono[0])
                    q_b.append(mono[1])
                    q_c.append(c)
        self.c0 = c0
        self.m = m
        L = sp.csr_matrix((lin_v, (lin_r, lin_c)), shape=(m, N))
        L.sort_indices()
        self.L = L
        # quadratic monomials arrive in transition order already
        self.q_ptr = np.concatenate([[0], np.cumsum(np.bincount(q_t, minlength=m))]).astype(np.int64)
        self.q_a = np.asarray(q_a, dtype=np.int64)
        self.q_b = np.asarray(q_b, dtype=np.int64)
        self.q_c = np.asarray(q_c, dtype=float)
        D = compile_model(model).D.tocsr()
        D.sort_indices()
        self.D = D
        self.tri = np.zeros((N, N), dtype=np.int64)
        self.tri[self.iu] = N + np.arange(len(self.iu[0]))
        self.tri.T[self.iu] = self.tri[self.iu]

    def pack(self, mu: np.ndarray, M: np.ndarray) -> np.ndarray:
        return np.concatenate([mu, M[self.iu]])

    def unpack(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        N = self.n
        mu = y[:N]
        M = np.empty((N, N))
        M[self.iu] = y[N:]
        M.T[self.iu] = y[N:]
        return mu, M

    def initial(self) -> np.ndarray:
        x0 = self.model.initial_array().astype(float)
        return self.pack(x0, np.outer(x0, x0))

    def means(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y[: self.n])

    def drift(self, y: np.ndarray) -> np.ndarray:
        L, D = self.L, self.D
        return K.moment_drift(np.ascontiguousarray(y, dtype=float), self.n, self.tri, self.c0,
                              L.indptr, L.indices, L.data, self.q_ptr, self.q_a, self.q_b,
                              self.q_c, D.indptr, D.indices, D.data, np.empty(self.dim))


def build_mean_field(model: SpatialModel) -> MeanFieldSystem:
    return MeanFieldSystem(model)


def build_moment_closure(model: SpatialModel) -> MomentSystem:
    return MomentSystem(model)


@dataclass
class SteadyStateOptions:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-6
    eps_osc: float = 1e-4
    t_max: float = 1000.0
    window: float | None = None  # default 10% of t_max
    rtol: float = 1e-8
    atol: float = 1e-10
    bound: float = 1e12
    fixed_time: float | None = None  # evaluate at this time instead of detecting equilibrium

    def __post_init__(self):
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")
        if self.window is None:
            self.window = 0.1 * self.t_max
        if self.fixed_time is not None and self.fixed_time < 0:
            raise ConfigError("fixed_time must be >= 0")


@dataclass
class SteadyState:
    mean: np.ndarray
    variance: np.ndarray | None
    t_reached: float
    converged: bool
    oscillatory: bool = False
    fixed_time: bool = False
    covariance: np.ndarray | None = None
    residual: float = float("nan")
    source: str = "mean-field"

    @property
    def usable(self) -> bool:
        return self.converged or self.fixed_time


def _summarise(system, y, t, converged, oscillatory=False, fixed=False, residual=np.nan):
    if isinstance(system, MomentSystem):
        mu, M = system.unpack(y)
        cov = M - np.outer(mu, mu)
        return SteadyState(mean=mu.copy(), variance=np.diag(cov).copy(), t_reached=t,
                           converged=converged, oscillatory=oscillatory, fixed_time=fixed,
                           covariance=cov, residual=residual, source=system.kind)
    return SteadyState(mean=np.array(y, dtype=float), variance=None, t_reached=t,
                       converged=converged, oscillatory=oscillatory, fixed_time=fixed,
                       residual=residual, source=system.kind)


def integrate_to_steady_state(system, x0=None, opts: SteadyStateOptions | None = None) -> SteadyState:
    """Adaptive Dormand-Prince 4(5) integration until the drift vanishes.

    Stops when ``|F(x)|_inf <= eps_abs + eps_rel |x|_inf`` (converged), when the
    averages over two successive windows of length W agree to ``eps_osc``
    relative (oscillatory; the latest window average is returned), or at
    ``t_max`` (not converged).  With ``opts.fixed_time`` set, the state at that
    time is returned instead.
    """
    opts = opts or SteadyStateOptions()
    y = system.initial() if x0 is None else np.asarray(x0, dtype=float).copy()
    if y.shape != (system.dim,):
        raise ConfigError(f"x0 has shape {y.shape}, system dimension is {system.dim}")

    def fun(_t, v):
        return system.drift(v)

    if opts.fixed_time is not None:
        if opts.fixed_time == 0:
            return _summarise(system, y, 0.0, False, fixed=True)
        y_end = _advance(fun, y, 0.0, opts.fixed_time, opts, None)[0]
        res = float(np.max(np.abs(system.drift(y_end))))
        return _summarise(system, y_end, opts.fixed_time, False, fixed=True, residual=res)

    f = system.drift(y)

    def small(fv, yv):
        return np.max(np.abs(fv)) <= opts.eps_abs + opts.eps_rel * np.max(np.abs(yv))

    if small(f, y):
        return _summarise(system, y, 0.0, True, residual=float(np.max(np.abs(f))))

    W = opts.window
    t = 0.0
    prev_avg = None
    h = None
    while t < opts.t_max:
        t_stop = min(t + W, opts.t_max)
        y, h, hit, integral = _advance(fun, y, t, t_stop, opts, h, small)
        if hit is not None:
            return _summarise(system, y, hit, True, residual=float(np.max(np.abs(system.drift(y)))))
        avg = integral / (t_stop - t)
        t = t_stop
        if prev_avg is not None:
            scale = max(np.max(np.abs(avg)), 1e-300)
            if np.max(np.abs(avg - prev_avg)) <= opts.eps_osc * scale:
                log.info("window averages stabilised at t=%g; treating as oscillatory", t)
                return _summarise(system, avg, t, True, oscillatory=True,
                                  residual=float(np.max(np.abs(system.drift(y)))))
        prev_avg = avg
    log.warning("no equilibrium detected before t_max=%g", opts.t_max)
    return _summarise(system, y, t, False, residual=float(np.max(np.abs(system.drift(y)))))


def _advance(fun, y, t0, t1, opts, h, stop=None):
    """Integrate from t0 to t1. Returns (y, last_step, stop_time_or_None, integral of y)."""
    kwargs = {"first_step": min(h, t1 - t0)} if h else {}
    solver = RK45(fun, t0, y, t1, rtol=opts.rtol, atol=opts.atol, **kwargs)
    integral = np.zeros_like(y)
    while solver.status == "running":
        y_old, t_old = solver.y.copy(), solver.t
        msg = solver.step()
        if solver.status == "failed":
            raise Divergence(f"integrator failed at t={solver.t:g}: {msg}")
        integral += 0.5 * (y_old + solver.y) * (solver.t - t_old)
        if not np.all(np.isfinite(solver.y)) or np.max(np.abs(solver.y)) > opts.bound:
            raise Divergence(f"state norm exceeded {opts.bound:g} at t={solver.t:g}")
        if stop is not None and stop(solver.f, solver.y):
            return solver.y.copy(), solver.step_size, solver.t, integral
    return solver.y.copy(), solver.step_size or h, None, integral


def integrate_trajectory(system, times, x0=None, rtol: float = 1e-8, atol: float = 1e-10) -> np.ndarray:
    """States on the requested time grid, shape (len(times), dim)."""
    times = np.asarray(times, dtype=float)
    y0 = system.initial() if x0 is None else np.asarray(x0, dtype=float)
    sol = solve_ivp(lambda _t, v: system.drift(v), (0.0, float(times[-1])), y0, method="RK45",
                    t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise Divergence(sol.message)
    return sol.y.T
