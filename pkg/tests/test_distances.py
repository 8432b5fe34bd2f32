from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from spatial_pctmc import expr as ex
from spatial_pctmc.distances import (DistanceMatrix, bhattacharyya_gaussian, linear_noise_distance,
                                     mean_field_distance, physical_distance)
from spatial_pctmc.errors import MissingCoordinates, NotConverged
from spatial_pctmc.fluid import SteadyState
from spatial_pctmc.model import AgentType, Location, SpatialModel, Transition


def _blank(n_loc, n_agents=1, coords=None):
    locs = [Location(i, f"l{i}", None if coords is None else coords[i]) for i in range(n_loc)]
    idle = Transition.make("idle", ex.mul(ex.const(0.0), ex.Pop(0, 0)), {(0, 0): -1})
    return SpatialModel.build(locs, [AgentType(a, f"A{a}") for a in range(n_agents)],
                              [0] * (n_loc * n_agents), [idle], {})


def _ss(mean, var=None, converged=True):
    return SteadyState(np.asarray(mean, float), None if var is None else np.asarray(var, float),
                       1.0, converged, source="moment-closure" if var is not None else "mean-field")


def quadrature_db(m1, v1, m2, v2):
    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    lo = min(m1 - 12 * s1, m2 - 12 * s2)
    hi = max(m1 + 12 * s1, m2 + 12 * s2)

    def f(x):
        p = np.exp(-(x - m1) ** 2 / (2 * v1)) / np.sqrt(2 * np.pi * v1)
        q = np.exp(-(x - m2) ** 2 / (2 * v2)) / np.sqrt(2 * np.pi * v2)
        return np.sqrt(p * q)

    pts = sorted({m1, m2})
    val, _ = quad(f, lo, hi, points=pts, limit=400, epsabs=1e-14, epsrel=1e-12)
    return -np.log(val)


def test_mean_field_examples():
    m = _blank(2, 2)
    assert mean_field_distance(_ss([0, 0, 3, 4]), m).values[0, 1] == pytest.approx(5.0)


def test_bhattacharyya_examples():
    assert bhattacharyya_gaussian(0, 1, 2, 1) == pytest.approx(0.5)
    assert bhattacharyya_gaussian(0, 1, 0, 4) == pytest.approx(0.25 * np.log(0.25 * (0.25 + 4 + 2)))
    assert bhattacharyya_gaussian(0, 1, 0, 4) == pytest.approx(0.111572, abs=1e-6)
    assert bhattacharyya_gaussian(3, 2, 3, 2) == 0.0


def test_linear_noise_identical_summaries():
    m = _blank(3)
    d = linear_noise_distance(_ss([1, 1, 2], [2, 2, 2]), m).values
    assert d[0, 1] == 0 and d[0, 2] > 0


def test_physical_examples():
    m = _blank(3, coords=[(0.0, 0.0), (3.0, 4.0), (0.0, 0.0)])
    d = physical_distance(m).values
    assert d[0, 1] == 5.0 and d[0, 2] == 0.0
    with pytest.raises(MissingCoordinates):
        physical_distance(_blank(2))


def test_latlon_distance():
    m = _blank(2, coords=[(0.0, 0.0), (0.0, 1.0)])
    assert physical_distance(m, latlon=True).values[0, 1] == pytest.approx(111.195, abs=1e-2)


def test_unconverged_rejected():
    with pytest.raises(NotConverged):
        mean_field_distance(_ss([0, 1], converged=False), _blank(2))


def test_bhattacharyya_matches_quadrature_sample(rng):
    for _ in range(10):
        m1, m2 = rng.uniform(-10, 10, 2)
        v1, v2 = rng.uniform(0.1, 25, 2)
        assert bhattacharyya_gaussian(m1, v1, m2, v2) == pytest.approx(quadrature_db(m1, v1, m2, v2), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(1, 3), st.integers(0, 10_000))
def test_distance_matrix_properties(n, a, seed):
    rng = np.random.default_rng(seed)
    m = _blank(n, a, coords=[tuple(c) for c in rng.normal(size=(n, 2))])
    mean = rng.uniform(0, 50, n * a)
    var = rng.uniform(0.1, 30, n * a)
    for d in (mean_field_distance(_ss(mean), m), linear_noise_distance(_ss(mean, var), m),
              physical_distance(m)):
        v = d.values
        assert np.array_equal(v, v.T) and np.all(v >= 0) and np.all(np.diag(v) == 0)


def test_csv_round_trip(tmp_path):
    d = DistanceMatrix(np.array([[0.0, 0.1 + 0.2], [0.1 + 0.2, 0.0]]), "mean-field", ["a", "b"])
    d.to_csv(tmp_path / "d.csv")
    back = DistanceMatrix.from_csv(tmp_path / "d.csv", "mean-field")
    assert np.array_equal(back.values, d.values) and back.labels == ["a", "b"]
