"""Acceptance criteria 1-11, one test each; every test records a pass/fail line."""

from __future__ import annotations

import logging
from collections import Counter

import numpy as np
import pytest
from scipy.integrate import quad

from spatial_pctmc import expr as ex
from spatial_pctmc.casestudies import (BikeConfig, Station, SisConfig, SyntheticBikeSpec,
                                       estimate_bike_rates, gen_bike, gen_sis, synthetic_journeys)
from spatial_pctmc.clustering import (ClusterMap, build_similarity, choose_k, njw_cluster,
                                      spectral_decompose)
from spatial_pctmc.distances import DistanceMatrix, bhattacharyya_gaussian
from spatial_pctmc.fluid import (SteadyStateOptions, build_mean_field, build_moment_closure,
                                 integrate_to_steady_state, integrate_trajectory)
from spatial_pctmc.model import Observable, Transition
from spatial_pctmc.pipeline import PipelineConfig, run_pipeline
from spatial_pctmc.reduction import rewrite_transitions
from spatial_pctmc.simulator import SimConfig, simulate_ensemble, ssa_run, stream

from conftest import immigration_death, record, single_site, sis_single, symmetric_sis



@pytest.fixture(autouse=True, scope="module")
def _quiet_package_logs():
    logger = logging.getLogger("spatial_pctmc")
    level = logger.level
    logger.setLevel(logging.ERROR)
    yield
    logger.setLevel(level)

BIKE_SEED = 0
BIKE_T_END = 5.0  # hours
SIS_SEEDS = range(5)


def _bike_model(seed=BIKE_SEED):
    spec = SyntheticBikeSpec(seed=seed)
    stations, records = synthetic_journeys(spec)
    return gen_bike(estimate_bike_rates(records, spec.horizon, stations))


def _bike_cfg(**kw):
    return PipelineConfig(runs=200, t_end=BIKE_T_END, seed=BIKE_SEED,
                          steady=SteadyStateOptions(fixed_time=BIKE_T_END), **kw)


def test_criterion_01_transition_counts():
    sis = len(gen_sis(SisConfig(m=30, connectivity=3)).transitions)
    n = 30
    bike = gen_bike(BikeConfig([Station(f"s{i}", (float(i), 0.0)) for i in range(n)], np.ones(n),
                               np.full((n, n), 1.0 / n), np.full((n, n), 3.0)))
    ok = sis == 240 and len(bike.transitions) == 1800
    record(1, ok, f"SIS {sis}/240, bike {len(bike.transitions)}/1800")
    assert ok


def _quadrature(m1, v1, m2, v2):
    s1, s2 = np.sqrt(v1), np.sqrt(v2)

    def f(x):
        p = np.exp(-(x - m1) ** 2 / (2 * v1)) / np.sqrt(2 * np.pi * v1)
        q = np.exp(-(x - m2) ** 2 / (2 * v2)) / np.sqrt(2 * np.pi * v2)
        return np.sqrt(p * q)

    lo = min(m1 - 14 * s1, m2 - 14 * s2)
    hi = max(m1 + 14 * s1, m2 + 14 * s2)
    val, _ = quad(f, lo, hi, points=sorted({m1, m2}), limit=500, epsabs=1e-15, epsrel=1e-13)
    return -np.log(val)


def test_criterion_02_bhattacharyya_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        m1, m2 = rng.uniform(-10, 10, 2)
        v1, v2 = rng.uniform(0.1, 25, 2)
        worst = max(worst, abs(float(bhattacharyya_gaussian(m1, v1, m2, v2)) - _quadrature(m1, v1, m2, v2)))
    record(2, worst <= 1e-6, f"max |closed form - quadrature| = {worst:.2e} over 100 pairs")
    assert worst <= 1e-6


def test_criterion_03_spectral_recovery():
    rng = np.random.default_rng(3)
    failures = []
    for inst in range(20):
        truth = rng.permutation(np.repeat(np.arange(3), 10))
        same = truth[:, None] == truth[None, :]
        d = np.where(same, rng.uniform(0.05, 0.15, (30, 30)), rng.uniform(9.0, 11.0, (30, 30)))
        d = np.triu(d, 1)
        d = d + d.T
        sim = build_similarity(DistanceMatrix(d, "mean-field", [f"p{i}" for i in range(30)]))
        k = choose_k(spectral_decompose(sim).eigenvalues)
        cm = njw_cluster(sim, k, seed=inst)
        if k != 3 or cm != ClusterMap.from_labels(truth):
            failures.append(inst)
    record(3, not failures, f"{20 - len(failures)}/20 instances with k=3 and exact block recovery")
    assert not failures


def test_criterion_04_exact_lumpability():
    model = symmetric_sis(m=10)
    times = np.linspace(0, 30, 100)
    orig = integrate_trajectory(build_mean_field(model), times, rtol=1e-11, atol=1e-11)
    totals = orig.reshape(100, 10, 2).sum(axis=1)
    rng = np.random.default_rng(4)
    partitions = [np.zeros(10, int), np.arange(10), np.arange(10) % 2, np.arange(10) // 4]
    partitions += [rng.integers(0, k, 10) for k in (2, 3, 4, 5, 6, 7)]
    worst = 0.0
    for labels in partitions:
        red = rewrite_transitions(model, ClusterMap.from_labels(labels)).model
        ys = integrate_trajectory(build_mean_field(red), times, rtol=1e-11, atol=1e-11)
        rt = ys.reshape(100, red.n_locations, 2).sum(axis=1)
        worst = max(worst, float(np.max(np.abs(rt - totals) / np.abs(totals))))
    record(4, worst <= 1e-6, f"max relative deviation of S/I totals {worst:.2e} over {len(partitions)} partitions")
    assert worst <= 1e-6


def test_criterion_05_identity_reduction():
    model = gen_sis(SisConfig(seed=0))
    res = run_pipeline(model, PipelineConfig(k=30, runs=20, t_end=5.0, seed=5))
    red = res.reduced.model
    same_multiset = (Counter((t.label, t.update, t.rate) for t in red.transitions)
                     == Counter((t.label, t.update, t.rate) for t in model.transitions))
    cfg = SimConfig(t_end=5.0, step=0.05)
    bitwise = all(np.array_equal(ssa_run(model, cfg, stream(s, r)), ssa_run(red, cfg, stream(s, r)))
                  for s in range(3) for r in range(3))
    zero = all(v == 0.0 for v in res.report.error_ratios.values())
    ok = same_multiset and bitwise and zero
    record(5, ok, f"multiset equal={same_multiset}, trajectories bitwise equal={bitwise}, "
                  f"pipeline error ratio zero={zero}")
    assert ok


def test_criterion_06_ssa_oracles():
    counter = single_site([Transition.make("tick", ex.Param("lam"), {(0, 0): 1})], [0], params={"lam": 2.0})
    death = single_site([Transition.make("die", ex.mul(ex.Param("mu"), ex.Pop(0, 0)), {(0, 0): -1})],
                        [100], params={"mu": 1.0})
    cases = [(counter, 10.0, 20.0), (death, 1.0, 100 * np.exp(-1.0))]
    zs = []
    for model, t, expect in cases:
        obs = [Observable.make("x", {(0, 0): 1.0})]
        ens = simulate_ensemble(model, SimConfig(t_end=t, grid=[0.0, t], replications=10_000, seed=6,
                                                 observables=obs))
        se = np.sqrt(ens.variance[-1, 0] / 10_000)
        zs.append(abs(ens.mean[-1, 0] - expect) / se)
    ok = all(z <= 3 for z in zs)
    record(6, ok, f"Poisson counter {zs[0]:.2f} SE, linear death {zs[1]:.2f} SE (10,000 runs)")
    assert ok


def test_criterion_07_moment_closure_oracle():
    tight = SteadyStateOptions(eps_abs=1e-9, eps_rel=1e-9, rtol=1e-12, atol=1e-12)
    ss = integrate_to_steady_state(build_moment_closure(immigration_death(10.0, 1.0)), opts=tight)
    mf = integrate_to_steady_state(build_mean_field(sis_single(0.5, 0.1, 100)), opts=tight)
    errs = [abs(ss.mean[0] - 10), abs(ss.variance[0] - 10), abs(mf.mean[1] - 99.8)]
    ok = max(errs) <= 1e-6 and ss.converged and mf.converged
    record(7, ok, f"|mean-10|={errs[0]:.1e}, |var-10|={errs[1]:.1e}, |I*-99.8|={errs[2]:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_08_sis_error_ratio():
    bounds = {"linear-noise": 0.15, "mean-field": 0.18}
    rows, ok = [], True
    for seed in SIS_SEEDS:
        model = gen_sis(SisConfig(seed=seed))
        for metric, bound in bounds.items():
            rep = run_pipeline(model, PipelineConfig(metric=metric, runs=200, t_end=20.0, seed=seed)).report
            good = rep.mean_error <= bound and 2 <= rep.k <= 8
            ok &= good
            rows.append(f"seed {seed} {metric}: k={rep.k} error={rep.mean_error:.3f}")
    record(8, ok, "; ".join(rows))
    assert ok


@pytest.mark.slow
def test_criterion_09_dynamics_beats_geometry():
    model = _bike_model()
    dyn = run_pipeline(model, _bike_cfg(metric="linear-noise")).report
    geo = run_pipeline(model, _bike_cfg(metric="physical", k=dyn.k)).report
    ok = dyn.mean_error < geo.mean_error
    record(9, ok, f"k={dyn.k}: d_L error {dyn.mean_error:.4f} vs physical {geo.mean_error:.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_10_speedup():
    rep = run_pipeline(gen_sis(SisConfig(seed=0)), PipelineConfig(runs=1000, t_end=20.0, seed=0)).report
    ok = rep.speedup >= 2.0
    record(10, ok, f"original {rep.wall_original:.1f} s vs reduced {rep.wall_reduced:.1f} s "
                   f"(aggregation {rep.aggregation_time:.1f} s): {rep.speedup:.2f}x")
    assert ok


@pytest.mark.slow
def test_criterion_11_pinning():
    model = _bike_model()
    base = run_pipeline(model, _bike_cfg(metric="linear-noise", k=5))
    D = base.distances.values
    cm = base.reduced.cluster_map
    errors = {}
    for c in range(cm.k):
        members = cm.members(c)
        medoid = members[int(np.argmin(D[np.ix_(members, members)].sum(axis=1)))]
        label = model.locations[medoid].label
        rep = run_pipeline(model, _bike_cfg(metric="linear-noise", k=5, pin=[label])).report
        errors[label] = rep.pinned_error
    mean = float(np.mean(list(errors.values())))
    ok = mean <= 0.15
    record(11, ok, f"pinned-station error {mean:.4f} averaged over "
                   + ", ".join(f"{k} {v:.3f}" for k, v in errors.items()))
    assert ok
