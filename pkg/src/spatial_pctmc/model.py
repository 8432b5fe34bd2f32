"""Spatial population CTMC models: locations, agent types, transitions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .errors import EvaluationError, ModelError, NegativePopulation

log = logging.getLogger(__name__)

# (agent index, location index)
Key = tuple[int, int]


@dataclass(frozen=True)
class Location:
    index: int
    label: str
    coord: tuple[float, float] | None = None


@dataclass(frozen=True)
class AgentType:
    index: int
    label: str


@dataclass(frozen=True)
class Transition:
    label: str
    rate: ex.RateExpr
    update: tuple[tuple[Key, int], ...]

    @classmethod
    def make(cls, label: str, rate: ex.RateExpr, update: Mapping[Key, int]) -> "Transition":
        items = tuple(sorted((k, int(v)) for k, v in update.items() if v != 0))
        if not items:
            raise ModelError(f"transition {label!r} has an empty update")
        return cls(label, rate, items)

    @property
    def update_map(self) -> dict[Key, int]:
        return dict(self.update)


@dataclass(frozen=True)
class Observable:
    name: str
    weights: tuple[tuple[Key, float], ...]

    @classmethod
    def make(cls, name: str, weights: Mapping[Key, float]) -> "Observable":
        items = tuple(sorted((k, float(w)) for k, w in weights.items() if w != 0.0))
        if not items:
            raise ModelError(f"observable {name!r} has no nonzero weight")
        return cls(name, items)

    def vector(self, n_agents: int, n_locations: int) -> np.ndarray:
        w = np.zeros(n_agents * n_locations)
        for (a, loc), v in self.weights:
            if not (0 <= a < n_agents and 0 <= loc < n_locations):
                raise ModelError(f"observable {self.name!r} weight out of range: {(a, loc)}")
            w[loc * n_agents + a] = v
        return w


@dataclass(frozen=True)
class SpatialModel:
    locations: tuple[Location, ...]
    agents: tuple[AgentType, ...]
    initial: tuple[int, ...]
    transitions: tuple[Transition, ...]
    params: tuple[tuple[str, float], ...] = ()
    # not part of structural identity; cached name lookups
    _cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        n, l = len(self.agents), len(self.locations)
        if [a.index for a in self.agents] != list(range(n)):
            raise ModelError("agent indices must be dense and ordered")
        if [loc.index for loc in self.locations] != list(range(l)):
            raise ModelError("location indices must be dense and ordered")
        if len({a.label for a in self.agents}) != n:
            raise ModelError("duplicate agent label")
        if len({loc.label for loc in self.locations}) != l:
            raise ModelError("duplicate location label")
        if len(self.initial) != n * l:
            raise ModelError(f"initial state has length {len(self.initial)}, expected {n * l}")
        if any(c < 0 for c in self.initial):
            raise ModelError("initial state has a negative entry")
        if not self.transitions:
            raise ModelError("model needs at least one transition")
        pnames = dict(self.params)
        for t in self.transitions:
            for a, loc in ex.populations(t.rate) | {k for k, _ in t.update}:
                if not (0 <= a < n and 0 <= loc < l):
                    raise ModelError(f"transition {t.label!r} references ({a}, {loc}) out of range")
            missing = ex.parameters(t.rate) - set(pnames)
            if missing:
                raise ModelError(f"transition {t.label!r} uses undeclared params {sorted(missing)}")

    @classmethod
    def build(cls, locations: Sequence[Location], agents: Sequence[AgentType],
              initial: Sequence[int], transitions: Sequence[Transition],
              params: Mapping[str, float] | None = None) -> "SpatialModel":
        return cls(tuple(locations), tuple(agents), tuple(int(c) for c in initial),
                   tuple(transitions), tuple((k, float(v)) for k, v in (params or {}).items()))

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_locations(self) -> int:
        return len(self.locations)

    @property
    def size(self) -> int:
        return len(self.agents) * len(self.locations)

    @property
    def param_map(self) -> dict[str, float]:
        if "params" not in self._cache:
            self._cache["params"] = dict(self.params)
        return self._cache["params"]

    def index(self, agent: int, location: int) -> int:
        return location * len(self.agents) + agent

    def agent_index(self, label: str) -> int:
        if "agents" not in self._cache:
            self._cache["agents"] = {a.label: a.index for a in self.agents}
        return self._cache["agents"][label]

    def location_index(self, label: str) -> int:
        if "locs" not in self._cache:
            self._cache["locs"] = {loc.label: loc.index for loc in self.locations}
        return self._cache["locs"][label]

    def initial_array(self) -> np.ndarray:
        return np.asarray(self.initial, dtype=np.int64)

    def update_matrix(self) -> np.ndarray:
        """Dense ``m x N`` integer matrix of update vectors."""
        D = np.zeros((len(self.transitions), self.size), dtype=np.int64)
        for i, t in enumerate(self.transitions):
            for (a, loc), v in t.update:
                D[i, self.index(a, loc)] += v
        return D

    def total_observable(self, agent_label: str) -> Observable:
        a = self.agent_index(agent_label)
        return Observable.make(f"total_{agent_label}",
                               {(a, loc): 1.0 for loc in range(self.n_locations)})


_warned_negative: set[tuple[int, str]] = set()


def eval_rate(model: SpatialModel, t: Transition, state) -> float:
    """Rate of ``t`` at ``state`` (integer or real); negative values clamp to 0."""
    try:
        v = ex.evaluate(t.rate, state, model.param_map, model.n_agents)
    except EvaluationError as err:
        raise EvaluationError("division by zero", transition=t.label) from err
    if v < 0.0:
        key = (id(model), t.label)
        if key not in _warned_negative:
            _warned_negative.add(key)
            log.warning("rate of transition %r is negative (%g); clamped to 0", t.label, v)
        return 0.0
    return v


def apply_transition(model: SpatialModel, state, t: Transition) -> np.ndarray:
    out = np.array(state, dtype=np.int64, copy=True)
    for (a, loc), v in t.update:
        out[model.index(a, loc)] += v
    if (out < 0).any():
        raise NegativePopulation(f"firing {t.label!r} makes a population negative")
    return out


def eval_observable(model: SpatialModel, obs: Observable, state) -> float:
    x = np.asarray(state, dtype=float)
    return float(sum(w * x[model.index(a, loc)] for (a, loc), w in obs.weights))
