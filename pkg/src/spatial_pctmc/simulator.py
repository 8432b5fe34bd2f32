"""Gillespie direct-method simulation and replication ensembles.

Random streams
--------------
Every replication draws from its own ``numpy.random.Generator(PCG64)``
(128-bit state).  The stream for replication ``r`` under seed ``s`` is
``PCG64(SeedSequence(s, spawn_key=(r,)))``; this rule is what makes ensembles
reproducible and independent of how replications are scheduled.  Stage seeds
in the pipeline are derived the same way with a string tag hashed into the
spawn key (see :func:`stage_seed`).
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .compiled import compile_model
from .errors import ConfigError, EvaluationError
from .model import Observable, SpatialModel


def stream(seed: int, replication: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replication,))))


def stage_seed(master: int, tag: str) -> int:
    """Derive a 63-bit stage seed from ``(master, tag)``."""
    key = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:4], "little")
    ss = np.random.SeedSequence(master, spawn_key=(key,))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass
class SimConfig:
    t_end: float
    grid: np.ndarray | None = None
    step: float | None = None
    replications: int = 1
    seed: int = 0
    observables: Sequence[Observable] = ()
    workers: int = 1

    def __post_init__(self):
        if self.t_end <= 0:
            raise ConfigError("t_end must be positive")
        if self.grid is None:
            if self.step is None or self.step <= 0:
                raise ConfigError("give either a grid or a positive step")
            n = int(np.floor(self.t_end / self.step + 1e-9))
            self.grid = np.arange(n + 1) * self.step
        self.grid = np.asarray(self.grid, dtype=np.float64)
        g = self.grid
        if g.ndim != 1 or len(g) == 0:
            raise ConfigError("grid must be a nonempty 1-D sequence")
        if g[0] < 0 or g[-1] > self.t_end + 1e-12 or np.any(np.diff(g) <= 0):
            raise ConfigError("grid must be strictly increasing within [0, t_end]")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class TrajectoryEnsemble:
    times: np.ndarray
    mean: np.ndarray  # (time, observable)
    variance: np.ndarray
    replications: int
    wall_clock: float
    names: list[str] = field(default_factory=list)
    seed: int = 0
    events: int = 0

    def column(self, name: str) -> np.ndarray:
        return self.mean[:, self.names.index(name)]

    def to_csv(self, path: str | Path) -> None:
        header = ["time"]
        for n in self.names:
            header += [f"{n}_mean", f"{n}_var"]
        cols = [self.times]
        for i in range(len(self.names)):
            cols += [self.mean[:, i], self.variance[:, i]]
        data = np.column_stack(cols)
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
        meta = {"seed": self.seed, "replications": self.replications,
                "wall_clock": self.wall_clock, "events": self.events}
        Path(str(path) + ".meta").write_text(
            "".join(f"{k}: {v}\n" for k, v in meta.items()), encoding="utf-8")


def read_trajectory_csv(path: str | Path) -> TrajectoryEnsemble:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    names = [h[: -len("_mean")] for h in header[1::2]]
    meta = {}
    mpath = Path(str(path) + ".meta")
    if mpath.exists():
        for line in mpath.read_text(encoding="utf-8").splitlines():
            k, _, v = line.partition(":")
            meta[k.strip()] = json.loads(v.strip())
    return TrajectoryEnsemble(
        times=data[:, 0], mean=data[:, 1::2], variance=data[:, 2::2],
        replications=int(meta.get("replications", 1)), wall_clock=float(meta.get("wall_clock", 0.0)),
        names=names, seed=int(meta.get("seed", 0)), events=int(meta.get("events", 0)))


def ssa_run(model: SpatialModel, cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Single trajectory: integer states at every grid point, shape (len(grid), N)."""
    states, _ = _run(model, cfg.grid, cfg.t_end, rng)
    return states


def _run(model, grid, t_end, rng, x0=None):
    cm = compile_model(model)
    x0 = model.initial_array() if x0 is None else np.asarray(x0, dtype=np.int64)
    out = np.empty((len(grid), cm.size), dtype=np.int64)
    neg = np.zeros(cm.n_transitions, dtype=np.int8)
    status, t, events = K.ssa_run(x0, grid, float(t_end), cm.ops, cm.args, cm.consts, cm.ptr,
                                  cm.up_ptr, cm.up_idx, cm.up_val, cm.dep_ptr, cm.dep_idx,
                                  rng, out, neg, cm.stack_size)
    cm.report_negative(neg)
    if status:
        raise EvaluationError("division by zero", transition=cm.labels[status - 1], time=t)
    return out, events


def observable_matrix(model: SpatialModel, observables: Sequence[Observable]) -> np.ndarray:
    if not observables:
        raise ConfigError("at least one observable is required")
    return np.column_stack([o.vector(model.n_agents, model.n_locations) for o in observables])


def simulate_ensemble(model: SpatialModel, cfg: SimConfig) -> TrajectoryEnsemble:
    """Mean and unbiased variance of each observable over independent runs.

    Runs may execute on ``cfg.workers`` threads; results are reduced in
    replication order, so the output does not depend on the worker count.
    """
    W = observable_matrix(model, cfg.observables)
    compile_model(model)
    grid, t_end = cfg.grid, cfg.t_end
    per_run = np.empty((cfg.replications, len(grid), W.shape[1]))
    events = np.zeros(cfg.replications, dtype=np.int64)

    def one(r: int) -> None:
        states, ev = _run(model, grid, t_end, stream(cfg.seed, r))
        per_run[r] = states @ W
        events[r] = ev

    start = time.perf_counter()
    if cfg.workers == 1:
        for r in range(cfg.replications):
            one(r)
    else:
        with ThreadPoolExecutor(cfg.workers) as pool:
            list(pool.map(one, range(cfg.replications)))
    wall = time.perf_counter() - start
    mean = per_run.mean(axis=0)
    if cfg.replications > 1:
        var = per_run.var(axis=0, ddof=1)
    else:
        var = np.zeros_like(mean)
    return TrajectoryEnsemble(times=grid.copy(), mean=mean, variance=var,
                              replications=cfg.replications, wall_clock=wall,
                              names=[o.name for o in cfg.observables], seed=cfg.seed,
                              events=int(events.sum()))


def jump_statistics(model: SpatialModel, state, n: int, rng: np.random.Generator):
    """Ratio estimate of the drift E[dX]/E[dt] from ``n`` single SSA steps at ``state``.

    Returns ``(estimate, standard_error)`` per population (delta method).
    """
    cm = compile_model(model)
    x = np.asarray(state, dtype=np.int64)
    sdx, sdx2, sdt, sdt2, sdtdx, status = K.sample_jumps(
        x, n, cm.ops, cm.args, cm.consts, cm.ptr, cm.up_ptr, cm.up_idx, cm.up_val, rng,
        cm.stack_size)
    if status:
        raise EvaluationError("division by zero", transition=cm.labels[status - 1])
    if sdt == 0.0:
        return np.zeros(len(x)), np.zeros(len(x))
    mx, mt = sdx / n, sdt / n
    vx = sdx2 / n - mx**2
    vt = sdt2 / n - mt**2
    cxt = sdtdx / n - mx * mt
    est = mx / mt
    var = (vx - 2 * est * cxt + est**2 * vt) / (mt**2 * n)
    return est, np.sqrt(np.maximum(var, 0.0))
