"""End-to-end aggregation pipeline and original-vs-reduced comparison."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import spm
from .clustering import (build_similarity, choose_k, isolated_vertices, njw_cluster,
                         spectral_decompose)
from .distances import (DistanceMatrix, linear_noise_distance, mean_field_distance,
                        physical_distance)
from .errors import (ConfigError, GridMismatch, MissingArtifact, SpatialPCTMCError,
                     StageError, UnsupportedRate)
from .fluid import (SteadyStateOptions, build_mean_field, build_moment_closure,
                    integrate_to_steady_state)
from .model import SpatialModel
from .reduction import ReducedModel, cluster_total_observables, rewrite_transitions
from .simulator import (SimConfig, TrajectoryEnsemble, read_trajectory_csv,
                        simulate_ensemble, stage_seed)

log = logging.getLogger(__name__)

METRICS = ("mean-field", "linear-noise", "physical")
NEAR_ZERO = 1e-9


def error_ratio(orig: TrajectoryEnsemble, red: TrajectoryEnsemble,
                names: Sequence[str] | None = None) -> dict[str, float]:
    """Average relative deviation of reduced means from original means, per observable.

    Grid points where the original mean is within 1e-9 of zero are skipped;
    an observable with no usable point gets NaN.
    """
    if orig.times.shape != red.times.shape or not np.allclose(orig.times, red.times,
                                                              rtol=0, atol=1e-12):
        raise GridMismatch("trajectories are on different time grids")
    names = list(names) if names is not None else [n for n in orig.names if n in red.names]
    if not names:
        raise GridMismatch("no observable names in common")
    out = {}
    for name in names:
        x, xh = orig.column(name), red.column(name)
        keep = np.abs(x) > NEAR_ZERO
        out[name] = float(np.mean(np.abs(xh[keep] - x[keep]) / np.abs(x[keep]))) if keep.any() else math.nan
    return out


@dataclass
class PipelineConfig:
    metric: str = "linear-noise"
    sigma: float | str = "median"
    k: int | None = None
    k_min: int = 2
    k_max: int | None = None
    pin: Sequence[str] = ()
    observe: str | None = None  # agent type compared per cluster
    runs: int = 200
    t_end: float = 20.0
    grid_step: float | None = None  # default t_end / 100
    seed: int = 0
    out: str | Path | None = None
    top: int = 10
    workers: int = 1
    steady: SteadyStateOptions = field(default_factory=SteadyStateOptions)
    latlon: bool = False

    def validate(self, model: SpatialModel) -> None:
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; choose from {', '.join(METRICS)}")
        if self.metric == "physical" and any(loc.coord is None for loc in model.locations):
            raise ConfigError("physical metric needs coordinates on every location")
        free = model.n_locations - len(set(self.pin))
        if self.k is not None and not 2 <= self.k <= free:
            raise ConfigError(f"k must lie in [2, {free}] (pinned locations are extra clusters)")
        labels = {loc.label for loc in model.locations}
        unknown = [p for p in self.pin if p not in labels]
        if unknown:
            raise ConfigError(f"unknown pinned locations: {', '.join(unknown)}")
        if self.observe is not None and self.observe not in {a.label for a in model.agents}:
            raise ConfigError(f"unknown agent type {self.observe!r}")
        if self.runs < 1 or self.t_end <= 0:
            raise ConfigError("runs and t_end must be positive")

    @property
    def step(self) -> float:
        return self.grid_step if self.grid_step else self.t_end / 100.0


def default_observed_agent(model: SpatialModel) -> str:
    labels = [a.label for a in model.agents]
    for pref in ("I", "Bike"):
        if pref in labels:
            return pref
    return labels[0]


@dataclass
class ComparisonReport:
    metric: str
    k: int
    sigma: float
    seed: int
    observe: str
    transitions_original: int
    transitions_reduced: int
    wall_original: float
    wall_reduced: float
    aggregation_time: float
    error_ratios: dict[str, float]
    pinned: list[str] = field(default_factory=list)
    pinned_error_ratios: dict[str, float] = field(default_factory=dict)
    cluster_sizes: list[int] = field(default_factory=list)
    eigenvalues: list[float] = field(default_factory=list)
    fluid_source: str = ""
    runs: int = 0

    @property
    def mean_error(self) -> float:
        vals = [v for v in self.error_ratios.values() if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def pinned_error(self) -> float:
        vals = [v for v in self.pinned_error_ratios.values() if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def speedup(self) -> float:
        return self.wall_original / self.wall_reduced if self.wall_reduced > 0 else math.inf

    def to_text(self) -> str:
        lines = [
            f"metric: {self.metric}",
            f"fluid_source: {self.fluid_source}",
            f"k: {self.k}",
            f"sigma: {self.sigma!r}",
            f"seed: {self.seed}",
            f"runs: {self.runs}",
            f"observe: {self.observe}",
            f"cluster_sizes: {' '.join(map(str, self.cluster_sizes))}",
            f"transitions_original: {self.transitions_original}",
            f"transitions_reduced: {self.transitions_reduced}",
            f"wall_original: {self.wall_original!r}",
            f"wall_reduced: {self.wall_reduced!r}",
            f"aggregation_time: {self.aggregation_time!r}",
            f"speedup: {self.speedup!r}",
            f"mean_error_ratio: {self.mean_error!r}",
        ]
        lines += [f"error_ratio {k}: {v!r}" for k, v in self.error_ratios.items()]
        if self.pinned:
            lines.append(f"pinned: {' '.join(self.pinned)}")
            lines.append(f"pinned_error_ratio: {self.pinned_error!r}")
            lines += [f"pinned_error_ratio {k}: {v!r}" for k, v in self.pinned_error_ratios.items()]
        return "\n".join(lines) + "\n"


@dataclass
class PipelineResult:
    report: ComparisonReport
    reduced: ReducedModel
    distances: DistanceMatrix
    eigenvalues: np.ndarray
    original_traj: TrajectoryEnsemble
    reduced_traj: TrajectoryEnsemble


class _Stages:
    """Runs named stages, wrapping failures in StageError."""

    def __init__(self):
        self.done: list[str] = []

    def run(self, name: str, fn, *args, **kwargs):
        try:
            out = fn(*args, **kwargs)
        except StageError:
            raise
        except (SpatialPCTMCError, ValueError, FloatingPointError, ArithmeticError) as err:
            log.error("stage %s failed after %s", name, ", ".join(self.done) or "nothing")
            raise StageError(name, err) from err
        self.done.append(name)
        return out


def compute_distances(model: SpatialModel, metric: str, steady: SteadyStateOptions,
                      latlon: bool = False) -> tuple[DistanceMatrix, str]:
    """Distances between locations; returns the matrix and the fluid engine used."""
    if metric == "physical":
        return physical_distance(model, latlon), "none"
    if metric == "linear-noise":
        try:
            system = build_moment_closure(model)
        except UnsupportedRate as err:
            log.warning("moment closure unavailable (%s); using mean-field distance", err)
        else:
            ss = integrate_to_steady_state(system, opts=steady)
            return linear_noise_distance(ss, model), "moment-closure"
    ss = integrate_to_steady_state(build_mean_field(model), opts=steady)
    return mean_field_distance(ss, model), "mean-field"


def warm_up(model: SpatialModel) -> None:
    """Compile the simulation kernels so timings exclude JIT cost."""
    from .simulator import _run, stream
    _run(model, np.array([0.0]), 1e-9, stream(0, 0))


def run_pipeline(model: SpatialModel, cfg: PipelineConfig) -> PipelineResult:
    cfg.validate(model)
    out = Path(cfg.out) if cfg.out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        spm.save_model(model, out / "original.spm")
    stages = _Stages()
    observe = cfg.observe or default_observed_agent(model)
    labels = [loc.label for loc in model.locations]
    pinned_idx = [model.location_index(p) for p in cfg.pin]

    t0 = time.perf_counter()
    dist, source = stages.run("distance", compute_distances, model, cfg.metric, cfg.steady, cfg.latlon)
    if out is not None:
        dist.to_csv(out / "distances.csv")
    sim = stages.run("similarity", build_similarity, dist, cfg.sigma)
    rest = [i for i in range(model.n_locations) if i not in set(pinned_idx)]
    lonely = isolated_vertices(sim.values, rest)
    if lonely:
        log.warning("location(s) %s have no similar neighbours; kept as singleton clusters",
                    ", ".join(labels[i] for i in lonely))
        rest = [i for i in rest if i not in lonely]
    dec = stages.run("spectral", spectral_decompose, sim.subset(rest))
    if out is not None:
        dec.to_csv(out / "eigenvalues.csv")
    if cfg.k is not None:
        k = cfg.k
    else:
        k_max = cfg.k_max if cfg.k_max is not None else min(9, len(rest) - 1)
        k = stages.run("choose-k", choose_k, dec.eigenvalues, cfg.k_min, k_max)
    cm = stages.run("cluster", njw_cluster, sim, k, pinned_idx, stage_seed(cfg.seed, "cluster"),
                    dist.values, lonely)
    if out is not None:
        cm.to_csv(out / "assignments.csv", labels)
    reduced = stages.run("reduce", rewrite_transitions, model, cm)
    aggregation = time.perf_counter() - t0
    if out is not None:
        reduced.save(out / "reduced.spm")

    orig_obs, red_obs = cluster_total_observables(model, cm, observe)
    sim_seed = stage_seed(cfg.seed, "simulate")
    warm_up(model)
    sc = dict(t_end=cfg.t_end, step=cfg.step, replications=cfg.runs, seed=sim_seed, workers=cfg.workers)
    orig_traj = stages.run("simulate-original", simulate_ensemble, model,
                           SimConfig(observables=orig_obs, **sc))
    red_traj = stages.run("simulate-reduced", simulate_ensemble, reduced.model,
                          SimConfig(observables=red_obs, **sc))
    if out is not None:
        orig_traj.to_csv(out / "trajectories_original.csv")
        red_traj.to_csv(out / "trajectories_reduced.csv")
    ratios = stages.run("compare", error_ratio, orig_traj, red_traj)

    pinned_names = [f"{observe}_C{cm.assignment[i]}" for i in pinned_idx]
    report = ComparisonReport(
        metric=cfg.metric, k=cm.k, sigma=sim.sigma, seed=cfg.seed, observe=observe,
        transitions_original=len(model.transitions),
        transitions_reduced=len(reduced.model.transitions),
        wall_original=orig_traj.wall_clock, wall_reduced=red_traj.wall_clock + aggregation,
        aggregation_time=aggregation, error_ratios=ratios, pinned=list(cfg.pin),
        pinned_error_ratios={p: ratios[n] for p, n in zip(cfg.pin, pinned_names)},
        cluster_sizes=cm.sizes, eigenvalues=[float(v) for v in dec.eigenvalues[: cfg.top]],
        fluid_source=source, runs=cfg.runs)
    if out is not None:
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        emit_plot_data(out, cfg.top)
    return PipelineResult(report, reduced, dist, dec.eigenvalues, orig_traj, red_traj)


def _pinned_labels(out: Path) -> list[str]:
    path = out / "report.txt"
    if not path.exists():
        return []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("pinned: "):
            return line[len("pinned: "):].split()
    return []


def emit_plot_data(out: str | Path, top: int = 10) -> list[Path]:
    """Write plot-ready CSVs from the artifacts in ``out``.

    ``eigenvalues_top.csv`` (index, eigenvalue) with the ``top`` smallest
    eigenvalues, ``overlay_<obs>.csv`` (time, orig_mean, reduced_mean) per
    compared observable, and ``pinned_<location>.csv`` for pinned locations.
    """
    out = Path(out)
    needed = ["eigenvalues.csv", "trajectories_original.csv", "trajectories_reduced.csv",
              "assignments.csv"]
    for name in needed:
        if not (out / name).exists():
            raise MissingArtifact(f"{out / name} not found")
    written = []
    eig = np.loadtxt(out / "eigenvalues.csv", delimiter=",", skiprows=1, ndmin=2)
    rows = eig[: min(top, len(eig))]
    path = out / "eigenvalues_top.csv"
    np.savetxt(path, rows, delimiter=",", header="index,eigenvalue", comments="",
               fmt=["%d", "%.17g"])
    written.append(path)

    orig = read_trajectory_csv(out / "trajectories_original.csv")
    red = read_trajectory_csv(out / "trajectories_reduced.csv")
    if orig.times.shape != red.times.shape or not np.allclose(orig.times, red.times):
        raise GridMismatch("trajectories are on different time grids")

    def overlay(name: str, path: Path) -> None:
        data = np.column_stack([orig.times, orig.column(name), red.column(name)])
        np.savetxt(path, data, delimiter=",", header="time,orig_mean,reduced_mean",
                   comments="", fmt="%.17g")
        written.append(path)

    for name in orig.names:
        if name in red.names:
            overlay(name, out / f"overlay_{name}.csv")

    pinned = _pinned_labels(out)
    if pinned:
        assign = {}
        with open(out / "assignments.csv", encoding="utf-8") as fh:
            fh.readline()
            for line in fh:
                lab, c, _ = line.strip().split(",")
                assign[lab] = int(c)
        prefix = orig.names[0].rsplit("_", 1)[0]
        for p in pinned:
            overlay(f"{prefix}_C{assign[p]}", out / f"pinned_{p}.csv")
    return written
