"""Command-line entry point: ``spatial-pctmc <subcommand> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import spm
from .casestudies import (SisConfig, SyntheticBikeSpec, estimate_bike_rates, gen_bike, gen_sis,
                          read_journeys, read_stations, synthetic_journeys, write_journeys,
                          write_stations)
from .clustering import ClusterMap, build_similarity, choose_k, njw_cluster, spectral_decompose
from .distances import DistanceMatrix
from .errors import (ConfigError, MissingArtifact, MissingCoordinates, ModelError, ParseError,
                     SpatialPCTMCError, StageError)
from .fluid import (SteadyStateOptions, build_mean_field, build_moment_closure,
                    integrate_to_steady_state, integrate_trajectory)
from .pipeline import (METRICS, PipelineConfig, compute_distances, default_observed_agent,
                       error_ratio, run_pipeline)
from .reduction import rewrite_transitions
from .simulator import SimConfig, read_trajectory_csv, simulate_ensemble, stage_seed

log = logging.getLogger("spatial_pctmc")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _labels(text: str | None) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _sigma(text: str) -> float | str:
    if text == "median":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("sigma must be a positive number or 'median'") from None


def _steady(args) -> SteadyStateOptions:
    return SteadyStateOptions(t_max=args.t_max, fixed_time=args.eval_time)


def _out_path(args, default: str) -> Path:
    path = Path(args.out or default)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _observables(model, agents: list[str]):
    agents = agents or [default_observed_agent(model)]
    return [model.total_observable(a) for a in agents]


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_sis(args) -> None:
    cfg = SisConfig(m=args.m, connectivity=args.connectivity, mu=args.mu,
                    population=args.population, infected=args.infected, seed=args.seed)
    model = gen_sis(cfg)
    path = _out_path(args, "sis.spm")
    spm.save_model(model, path, f"SIS metapopulation m={cfg.m} connectivity={cfg.connectivity} "
                                f"seed={cfg.seed}")
    print(f"{path}: {len(model.transitions)} transitions")


def cmd_gen_bike(args) -> None:
    if args.journeys:
        records = read_journeys(args.journeys)
        stations = read_stations(args.stations) if args.stations else None
        horizon = args.horizon
        if horizon is None:
            raise ConfigError("--horizon is required with --journeys")
    else:
        spec = SyntheticBikeSpec(n_stations=args.stations_count, groups=args.groups, seed=args.seed)
        stations, records = synthetic_journeys(spec)
        horizon = spec.horizon
        if args.journeys_out:
            write_journeys(records, args.journeys_out)
            write_stations(stations, Path(args.journeys_out).with_suffix(".stations.csv"))
    cfg = estimate_bike_rates(records, horizon, stations)
    model = gen_bike(cfg)
    path = _out_path(args, "bike.spm")
    spm.save_model(model, path, f"bike sharing, {len(cfg.stations)} stations, horizon {horizon} h")
    print(f"{path}: {len(model.transitions)} transitions")


def cmd_estimate_rates(args) -> None:
    records = read_journeys(args.journeys)
    stations = read_stations(args.stations) if args.stations else None
    cfg = estimate_bike_rates(records, args.horizon, stations)
    path = _out_path(args, "rates.csv")
    labels = [s.label for s in cfg.stations]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("start,end,lam,p,mu\n")
        for i, a in enumerate(labels):
            for j, b in enumerate(labels):
                if cfg.p[i, j] > 0:
                    fh.write(f"{a},{b},{float(cfg.lam[i])!r},{float(cfg.p[i, j])!r},{float(cfg.mu[i, j])!r}\n")
    print(f"{path}: rates for {len(labels)} stations")


def cmd_simulate(args) -> None:
    model = spm.load_model(args.model)
    cfg = SimConfig(t_end=args.t_end, step=args.grid_step or args.t_end / 100,
                    replications=args.runs, seed=args.seed,
                    observables=_observables(model, _labels(args.observe)), workers=args.workers)
    ens = simulate_ensemble(model, cfg)
    path = _out_path(args, "trajectories.csv")
    ens.to_csv(path)
    print(f"{path}: {ens.replications} runs, {ens.wall_clock:.3f} s")


def _steady_csv(model, ss, path: Path) -> None:
    n = model.n_agents
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("location,agent,mean" + (",variance" if ss.variance is not None else "") + "\n")
        for i in range(model.size):
            row = f"{model.locations[i // n].label},{model.agents[i % n].label},{float(ss.mean[i])!r}"
            if ss.variance is not None:
                row += f",{float(ss.variance[i])!r}"
            fh.write(row + "\n")
    Path(str(path) + ".meta").write_text(
        f"t_reached: {ss.t_reached!r}\nconverged: {ss.converged}\noscillatory: {ss.oscillatory}\n"
        f"fixed_time: {ss.fixed_time}\nresidual: {ss.residual!r}\n", encoding="utf-8")


def _fluid(args, build, default: str) -> None:
    model = spm.load_model(args.model)
    system = build(model)
    path = _out_path(args, default)
    if args.trajectory:
        times = np.arange(0.0, args.t_end + 1e-12, args.grid_step or args.t_end / 100)
        ys = integrate_trajectory(system, times)
        header = ["time"] + [f"{model.agents[i % model.n_agents].label}@"
                             f"{model.locations[i // model.n_agents].label}" for i in range(model.size)]
        np.savetxt(path, np.column_stack([times, ys[:, : model.size]]), delimiter=",",
                   header=",".join(header), comments="", fmt="%.17g")
        print(f"{path}: {len(times)} time points")
        return
    ss = integrate_to_steady_state(system, opts=_steady(args))
    _steady_csv(model, ss, path)
    state = "converged" if ss.converged else ("fixed time" if ss.fixed_time else "NOT converged")
    print(f"{path}: {state} at t={ss.t_reached:g}")
    if not ss.usable:
        raise StageError(system.kind, RuntimeError("no equilibrium before t_max"))


def cmd_meanfield(args) -> None:
    _fluid(args, build_mean_field, "meanfield.csv")


def cmd_moments(args) -> None:
    _fluid(args, build_moment_closure, "moments.csv")


def cmd_distance(args) -> None:
    model = spm.load_model(args.model)
    try:
        d, source = compute_distances(model, args.metric, _steady(args), args.latlon)
    except MissingCoordinates:
        raise
    except SpatialPCTMCError as err:
        raise StageError("distance", err) from err
    path = _out_path(args, "distances.csv")
    d.to_csv(path)
    print(f"{path}: {args.metric} distances ({source})")


def cmd_cluster(args) -> None:
    d = DistanceMatrix.from_csv(args.distances)
    pinned = [d.labels.index(p) if p in d.labels else None for p in _labels(args.pin)]
    if None in pinned:
        raise ConfigError("unknown pinned label")
    out = Path(args.out or "clusters")
    out.mkdir(parents=True, exist_ok=True)
    try:
        sim = build_similarity(d, args.sigma)
        rest = [i for i in range(len(d.labels)) if i not in pinned]
        dec = spectral_decompose(sim.subset(rest))
        dec.to_csv(out / "eigenvalues.csv", top=args.top)
        k = args.k
        if k is None:
            k_max = args.k_max if args.k_max is not None else min(9, len(rest) - 1)
            k = choose_k(dec.eigenvalues, args.k_min, k_max)
        cm = njw_cluster(sim, k, pinned, stage_seed(args.seed, "cluster"), d.values)
    except ConfigError:
        raise
    except SpatialPCTMCError as err:
        raise StageError("cluster", err) from err
    cm.to_csv(out / "assignments.csv", d.labels)
    print(f"{out}: k={cm.k} sizes={cm.sizes} sigma={sim.sigma:g}")


def cmd_reduce(args) -> None:
    model = spm.load_model(args.model)
    cm = ClusterMap.from_csv(args.assignments, [loc.label for loc in model.locations])
    reduced = rewrite_transitions(model, cm)
    path = _out_path(args, "reduced.spm")
    reduced.save(path)
    print(f"{path}: {len(model.transitions)} -> {len(reduced.model.transitions)} transitions")


def cmd_compare(args) -> None:
    orig = read_trajectory_csv(args.original)
    red = read_trajectory_csv(args.reduced)
    ratios = error_ratio(orig, red)
    lines = [f"error_ratio {k}: {v!r}" for k, v in ratios.items()]
    vals = [v for v in ratios.values() if not math.isnan(v)]
    lines.append(f"mean_error_ratio: {float(np.mean(vals)) if vals else math.nan!r}")
    if orig.wall_clock and red.wall_clock:
        lines.append(f"speedup: {orig.wall_clock / red.wall_clock!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _out_path(args, "").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_pipeline(args) -> None:
    if args.model:
        model = spm.load_model(args.model)
    elif args.gen == "sis":
        model = gen_sis(SisConfig(seed=args.seed))
    elif args.gen == "bike":
        stations, records = synthetic_journeys(SyntheticBikeSpec(seed=args.seed))
        model = gen_bike(estimate_bike_rates(records, SyntheticBikeSpec().horizon, stations))
    else:
        raise ConfigError("give --model or --gen")
    cfg = PipelineConfig(metric=args.metric, sigma=args.sigma, k=args.k, k_min=args.k_min,
                         k_max=args.k_max, pin=_labels(args.pin), observe=args.observe,
                         runs=args.runs, t_end=args.t_end, grid_step=args.grid_step,
                         seed=args.seed, out=args.out or "pipeline_out", top=args.top,
                         workers=args.workers, steady=_steady(args), latlon=args.latlon)
    result = run_pipeline(model, cfg)
    sys.stdout.write(result.report.to_text())


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spatial-pctmc",
                                description="Aggregate locations of spatial population CTMC models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, out=True):
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if out:
            sp.add_argument("--out")

    def sim_flags(sp, runs=200, t_end=20.0):
        sp.add_argument("--runs", type=int, default=runs)
        sp.add_argument("--t-end", type=float, default=t_end)
        sp.add_argument("--grid-step", type=float, default=None)
        sp.add_argument("--workers", type=int, default=1)

    def steady_flags(sp):
        sp.add_argument("--t-max", type=float, default=1000.0)
        sp.add_argument("--eval-time", type=float, default=None,
                        help="evaluate the fluid state at this time instead of detecting equilibrium")

    def cluster_flags(sp):
        sp.add_argument("--sigma", type=_sigma, default="median")
        sp.add_argument("--k", type=int, default=None)
        sp.add_argument("--k-min", type=int, default=2)
        sp.add_argument("--k-max", type=int, default=None)
        sp.add_argument("--pin", default=None, help="comma-separated location labels")
        sp.add_argument("--top", type=int, default=10)

    sp = sub.add_parser("gen-sis", help="generate the SIS metapopulation model")
    sp.add_argument("--m", type=int, default=30)
    sp.add_argument("--connectivity", type=int, default=3)
    sp.add_argument("--mu", type=float, default=0.1)
    sp.add_argument("--population", type=int, default=200)
    sp.add_argument("--infected", type=int, default=10)
    common(sp)
    sp.set_defaults(func=cmd_gen_sis)

    sp = sub.add_parser("gen-bike", help="generate a bike-sharing model from journeys")
    sp.add_argument("--journeys")
    sp.add_argument("--stations")
    sp.add_argument("--horizon", type=float, default=None, help="observation window in hours")
    sp.add_argument("--stations-count", type=int, default=30, help="synthetic data only")
    sp.add_argument("--groups", type=int, default=5, help="synthetic data only")
    sp.add_argument("--journeys-out", help="also write the synthetic journeys here")
    common(sp)
    sp.set_defaults(func=cmd_gen_bike)

    sp = sub.add_parser("estimate-rates", help="estimate bike rates from journeys")
    sp.add_argument("--journeys", required=True)
    sp.add_argument("--stations")
    sp.add_argument("--horizon", type=float, required=True)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_estimate_rates)

    sp = sub.add_parser("simulate", help="SSA ensemble")
    sp.add_argument("model")
    sp.add_argument("--observe", help="comma-separated agent types (totals over locations)")
    sim_flags(sp)
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    for name, fn, help_ in (("meanfield", cmd_meanfield, "mean-field equilibrium"),
                            ("moments", cmd_moments, "moment-closure equilibrium")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("model")
        sp.add_argument("--trajectory", action="store_true", help="dump the ODE path instead")
        sp.add_argument("--t-end", type=float, default=20.0)
        sp.add_argument("--grid-step", type=float, default=None)
        steady_flags(sp)
        common(sp, seed=False)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("distance", help="distances between locations")
    sp.add_argument("model")
    sp.add_argument("--metric", choices=METRICS, default="linear-noise")
    sp.add_argument("--latlon", action="store_true")
    steady_flags(sp)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_distance)

    sp = sub.add_parser("cluster", help="spectral clustering of a distance matrix")
    sp.add_argument("distances")
    cluster_flags(sp)
    common(sp)
    sp.set_defaults(func=cmd_cluster)

    sp = sub.add_parser("reduce", help="build the reduced model from cluster assignments")
    sp.add_argument("model")
    sp.add_argument("assignments")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_reduce)

    sp = sub.add_parser("compare", help="error ratio between two trajectory files")
    sp.add_argument("original")
    sp.add_argument("reduced")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("pipeline", help="distance, clustering, reduction and comparison")
    sp.add_argument("--model")
    sp.add_argument("--gen", choices=("sis", "bike"))
    sp.add_argument("--metric", choices=METRICS, default="linear-noise")
    sp.add_argument("--observe", default=None)
    sp.add_argument("--latlon", action="store_true")
    cluster_flags(sp)
    sim_flags(sp)
    steady_flags(sp)
    common(sp)
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, ParseError, ModelError, MissingArtifact, MissingCoordinates,
            FileNotFoundError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as err:
        print(f"stage failure: {err}", file=sys.stderr)
        return EXIT_STAGE
    except SpatialPCTMCError as err:
        print(f"stage failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
