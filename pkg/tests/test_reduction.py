from __future__ import annotations

import logging
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatial_pctmc.casestudies import SisConfig, gen_sis
from spatial_pctmc.clustering import ClusterMap
from spatial_pctmc.fluid import build_mean_field, integrate_trajectory
from spatial_pctmc.model import Observable, eval_rate
from spatial_pctmc.reduction import (aggregate_initial_state, cluster_total_observables,
                                     reduce_observable, rewrite_transitions)
from spatial_pctmc.simulator import SimConfig, simulate_ensemble, ssa_run, stream
from spatial_pctmc.spm import parse_model

from conftest import symmetric_sis


def _sis(m=6, seed=0, **kw):
    return gen_sis(SisConfig(m=m, connectivity=2, seed=seed, **kw))


def test_aggregate_initial_state():
    m = _sis(3)
    x = aggregate_initial_state(m, ClusterMap.from_labels([0, 0, 1]))
    assert x.tolist() == [2 * 190, 20, 190, 10]
    assert aggregate_initial_state(m, ClusterMap.identity(3)).tolist() == list(m.initial)


def test_intra_cluster_movement_pruned_and_infections_merged():
    m = _sis(4, seed=2)
    red = rewrite_transitions(m, ClusterMap.from_labels([0, 0, 1, 1]))
    labels = [t.label for t in red.model.transitions]
    assert not any(lab.startswith("mv") and ("l1_l2" in lab or "l3_l4" in lab) for lab in labels)
    inf = next(t for t in red.model.transitions if t.label == "inf_l1")
    assert dict(red.provenance)["inf_l1"] == ("inf_l1", "inf_l2")
    b1, b2 = m.param_map["beta_1"], m.param_map["beta_2"]
    x = np.zeros(red.model.size)
    x[red.model.index(0, 0)], x[red.model.index(1, 0)] = 30, 8
    assert eval_rate(red.model, inf, x) == pytest.approx((b1 + b2) * 15 * 4)


def test_reduced_count_formula():
    """Reduced SIS: one infection and one recovery per cluster plus one move per crossing."""
    for seed in range(3):
        m = gen_sis(SisConfig(seed=seed))
        cm = ClusterMap.from_labels(np.arange(30) % 4)
        red = rewrite_transitions(m, cm)
        crossings = set()
        for t in m.transitions:
            if t.label.startswith("mv"):
                (a, src), (_, dst) = sorted((key for key, _ in t.update), key=lambda k: dict(t.update)[k])
                if cm.assignment[src] != cm.assignment[dst]:
                    crossings.add((a, cm.assignment[src], cm.assignment[dst]))
        assert len(red.model.transitions) == 2 * cm.k + len(crossings) < 240


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 500), st.data())
def test_update_conservation(m, seed, data):
    model = gen_sis(SisConfig(m=m, connectivity=1, seed=seed))
    labels = data.draw(st.lists(st.integers(0, m - 1), min_size=m, max_size=m))
    cm = ClusterMap.from_labels(labels)
    red = rewrite_transitions(model, cm)
    by_label = {t.label: t for t in model.transitions}
    for t in red.model.transitions:
        for src in dict(red.provenance)[t.label]:
            for a in range(model.n_agents):
                assert (sum(v for (b, _), v in t.update if b == a)
                        == sum(v for (b, _), v in by_label[src].update if b == a))
        assert t.update


def test_identity_partition_reproduces_model():
    m = _sis(6, seed=1)
    red = rewrite_transitions(m, ClusterMap.identity(6))
    assert Counter((t.update, t.rate) for t in red.model.transitions) == \
        Counter((t.update, t.rate) for t in m.transitions)
    cfg = SimConfig(t_end=5, step=0.5)
    assert np.array_equal(ssa_run(m, cfg, stream(3, 0)), ssa_run(red.model, cfg, stream(3, 0)))


def test_exact_lumpability():
    m = symmetric_sis(m=6)
    times = np.linspace(0, 20, 21)
    orig = integrate_trajectory(build_mean_field(m), times, rtol=1e-10, atol=1e-10)
    cm = ClusterMap.from_labels([0, 1, 1, 2, 2, 2])
    red = rewrite_transitions(m, cm)
    redy = integrate_trajectory(build_mean_field(red.model), times, rtol=1e-10, atol=1e-10)
    tot = orig.reshape(len(times), 6, 2).sum(axis=1)
    rtot = redy.reshape(len(times), 3, 2).sum(axis=1)
    assert np.allclose(rtot, tot, rtol=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 300), st.data())
def test_rate_consistency_at_equal_populations(seed, data):
    m = _sis(5, seed=seed)
    labels = data.draw(st.lists(st.integers(0, 2), min_size=5, max_size=5))
    cm = ClusterMap.from_labels(labels)
    red = rewrite_transitions(m, cm)
    per_cluster = data.draw(st.lists(st.integers(0, 50), min_size=2 * cm.k, max_size=2 * cm.k))
    x = np.array([per_cluster[2 * cm.assignment[i] + a] for i in range(5) for a in range(2)], float)
    xr = np.array([per_cluster[2 * c + a] * cm.sizes[c] for c in range(cm.k) for a in range(2)], float)
    by_label = {t.label: t for t in m.transitions}
    for t in red.model.transitions:
        want = sum(eval_rate(m, by_label[s], x) for s in dict(red.provenance)[t.label])
        assert eval_rate(red.model, t, xr) == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_reduced_model_serializes(tmp_path):
    red = rewrite_transitions(_sis(5), ClusterMap.from_labels([0, 1, 0, 1, 2], pinned=[4]))
    red.save(tmp_path / "r.spm")
    text = (tmp_path / "r.spm").read_text()
    assert "cluster C2 (pinned): l5" in text
    assert parse_model(text) == red.model


def test_reduce_observable(caplog):
    cm = ClusterMap.from_labels([0, 0, 1], pinned=[2])
    total = Observable.make("I", {(1, i): 1.0 for i in range(3)})
    assert dict(reduce_observable(total, cm, 2).weights) == {(1, 0): 1.0, (1, 1): 1.0}
    pin = Observable.make("p", {(1, 2): 1.0})
    assert dict(reduce_observable(pin, cm, 2).weights) == {(1, 1): 1.0}
    with caplog.at_level(logging.WARNING):
        mixed = reduce_observable(Observable.make("m", {(1, 0): 1.0, (1, 1): 3.0}), cm, 2)
    assert dict(mixed.weights) == {(1, 0): 2.0}
    assert "ApproximateObservable" in caplog.text


def test_cluster_totals_identity_gives_zero_error():
    m = _sis(4, seed=3)
    cm = ClusterMap.identity(4)
    red = rewrite_transitions(m, cm)
    o, r = cluster_total_observables(m, cm, "I")
    cfg = lambda obs: SimConfig(t_end=3, step=0.5, replications=4, seed=2, observables=obs)
    a = simulate_ensemble(m, cfg(o))
    b = simulate_ensemble(red.model, cfg(r))
    assert np.array_equal(a.mean, b.mean)
