from __future__ import annotations

import numpy as np
import pytest

from spatial_pctmc import expr as ex
from spatial_pctmc.model import AgentType, Location, SpatialModel, Transition


def single_site(transitions, initial, agents=("X",), params=None) -> SpatialModel:
    return SpatialModel.build([Location(0, "l1")], [AgentType(i, a) for i, a in enumerate(agents)],
                              initial, transitions, params or {})


def immigration_death(lam=10.0, mu=1.0, x0=0) -> SpatialModel:
    return single_site([
        Transition.make("birth", ex.Param("lam"), {(0, 0): 1}),
        Transition.make("death", ex.mul(ex.Param("mu"), ex.Pop(0, 0)), {(0, 0): -1}),
    ], [x0], params={"lam": lam, "mu": mu})


def sis_single(beta=0.5, mu=0.1, n=100, i0=1) -> SpatialModel:
    S, I = 0, 1
    return single_site([
        Transition.make("inf", ex.mul(ex.Param("beta"), ex.Pop(S, 0), ex.Pop(I, 0)),
                        {(S, 0): -1, (I, 0): 1}),
        Transition.make("rec", ex.mul(ex.Param("mu"), ex.Pop(I, 0)), {(I, 0): -1, (S, 0): 1}),
    ], [n - i0, i0], agents=("S", "I"), params={"beta": beta, "mu": mu})


def symmetric_sis(m=10, beta=0.002, mu=0.1, rate=0.3, pop=200, infected=10) -> SpatialModel:
    """Fully symmetric SIS: equal betas, complete movement graph at one rate."""
    S, I = 0, 1
    locs = [Location(i, f"l{i + 1}") for i in range(m)]
    ts = []
    for i in range(m):
        ts.append(Transition.make(f"inf_{i}", ex.mul(ex.Param("beta"), ex.Pop(S, i), ex.Pop(I, i)),
                                  {(S, i): -1, (I, i): 1}))
        ts.append(Transition.make(f"rec_{i}", ex.mul(ex.Param("mu"), ex.Pop(I, i)),
                                  {(I, i): -1, (S, i): 1}))
    for i in range(m):
        for j in range(m):
            if i != j:
                for a, name in ((S, "S"), (I, "I")):
                    ts.append(Transition.make(f"mv{name}_{i}_{j}", ex.mul(ex.Param("r"), ex.Pop(a, i)),
                                              {(a, i): -1, (a, j): 1}))
    return SpatialModel.build(locs, [AgentType(0, "S"), AgentType(1, "I")],
                              [pop - infected, infected] * m, ts,
                              {"beta": beta, "mu": mu, "r": rate})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
