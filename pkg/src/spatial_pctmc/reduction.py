"""Lumping locations into clusters: aggregated state, rewritten and merged transitions."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import expr as ex
from . import spm
from .clustering import ClusterMap
from .errors import ConfigError
from .model import Location, Observable, SpatialModel, Transition

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReducedModel:
    model: SpatialModel
    cluster_map: ClusterMap
    # reduced transition label -> source transition labels, in reduced order
    provenance: tuple[tuple[str, tuple[str, ...]], ...]
    source_labels: tuple[str, ...] = ()

    def cluster_label(self, c: int) -> str:
        return self.model.locations[c].label

    def header(self) -> str:
        lines = ["reduced model", f"clusters: {self.cluster_map.k}"]
        for c in range(self.cluster_map.k):
            members = " ".join(self.source_labels[i] for i in self.cluster_map.members(c))
            tag = " (pinned)" if any(i in self.cluster_map.pinned for i in self.cluster_map.members(c)) else ""
            lines.append(f"cluster {self.cluster_label(c)}{tag}: {members}")
        for label, sources in self.provenance:
            lines.append(f"source {label}: {' '.join(sources)}")
        return "\n".join(lines)

    def serialize(self) -> str:
        return spm.serialize_model(self.model, self.header())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize(), encoding="utf-8")


def _check_map(model: SpatialModel, cm: ClusterMap) -> None:
    if len(cm.assignment) != model.n_locations:
        raise ConfigError(f"cluster map covers {len(cm.assignment)} locations, "
                          f"model has {model.n_locations}")


def aggregate_initial_state(model: SpatialModel, cm: ClusterMap) -> np.ndarray:
    """Per-cluster sums of each agent type, location-major over clusters."""
    _check_map(model, cm)
    n = model.n_agents
    x = model.initial_array().reshape(model.n_locations, n)
    out = np.zeros((cm.k, n), dtype=np.int64)
    np.add.at(out, np.asarray(cm.assignment), x)
    return out.reshape(-1)


def _cluster_locations(model: SpatialModel, cm: ClusterMap) -> list[Location]:
    locs = []
    for c in range(cm.k):
        members = [model.locations[i] for i in cm.members(c)]
        coord = None
        if all(m.coord is not None for m in members):
            coord = tuple(float(v) for v in np.mean([m.coord for m in members], axis=0))
        locs.append(Location(c, f"C{c}", coord))
    return locs


def rewrite_transitions(model: SpatialModel, cm: ClusterMap) -> ReducedModel:
    """Build the reduced model over the clusters of ``cm``.

    Updates are re-targeted to clusters and summed; each ``X@loc`` in a rate
    becomes ``X@cluster / |cluster|`` (singletons keep the bare reference);
    transitions whose update cancels out are dropped; transitions with equal
    updates are merged into one whose rate is the symbolic sum of theirs.
    Reduced transitions keep the order and label of their first source.
    """
    _check_map(model, cm)
    assign = cm.assignment
    sizes = cm.sizes

    def lump(p: ex.Pop) -> ex.RateExpr:
        c = assign[p.location]
        node = ex.Pop(p.agent, c)
        return node if sizes[c] == 1 else ex.BinOp("/", node, ex.Const(float(sizes[c])))

    groups: dict[tuple, list[int]] = {}
    rates: list[ex.RateExpr] = []
    for j, t in enumerate(model.transitions):
        upd: dict[tuple[int, int], int] = {}
        for (a, loc), v in t.update:
            key = (a, assign[loc])
            upd[key] = upd.get(key, 0) + v
        vec = tuple(sorted((k, v) for k, v in upd.items() if v != 0))
        rates.append(ex.substitute(t.rate, lump))
        if not vec:
            continue
        groups.setdefault(vec, []).append(j)

    transitions = []
    provenance = []
    for vec, members in groups.items():
        label = model.transitions[members[0]].label
        rate = ex.total([rates[j] for j in members])
        transitions.append(Transition(label, rate, vec))
        provenance.append((label, tuple(model.transitions[j].label for j in members)))

    used = set()
    for t in transitions:
        used |= ex.parameters(t.rate)
    params = {k: v for k, v in model.params if k in used}
    reduced = SpatialModel.build(_cluster_locations(model, cm), model.agents,
                                 aggregate_initial_state(model, cm), transitions, params)
    return ReducedModel(reduced, cm, tuple(provenance),
                        tuple(loc.label for loc in model.locations))


def reduce_observable(obs: Observable, cm: ClusterMap, n_agents: int) -> Observable:
    """Carry an observable over to cluster counts.

    Weights must agree within each cluster; otherwise the member weights are
    averaged and a warning is logged.
    """
    w = dict(obs.weights)
    out: dict[tuple[int, int], float] = {}
    for c in range(cm.k):
        members = cm.members(c)
        for a in range(n_agents):
            vals = [w.get((a, i), 0.0) for i in members]
            if not any(vals):
                continue
            if len(set(vals)) > 1:
                log.warning("observable %r has unequal weights for agent %d in cluster %d; "
                            "averaging (ApproximateObservable)", obs.name, a, c)
            out[(a, c)] = float(np.mean(vals))
    return Observable.make(obs.name, out)


def cluster_total_observables(model: SpatialModel, cm: ClusterMap, agent_label: str,
                              cluster_labels: list[str] | None = None) -> tuple[list[Observable], list[Observable]]:
    """Per-cluster totals of one agent type: (over original locations, over clusters)."""
    a = model.agent_index(agent_label)
    orig, red = [], []
    for c in range(cm.k):
        name = f"{agent_label}_{cluster_labels[c] if cluster_labels else f'C{c}'}"
        orig.append(Observable.make(name, {(a, i): 1.0 for i in cm.members(c)}))
        red.append(Observable.make(name, {(a, c): 1.0}))
    return orig, red
