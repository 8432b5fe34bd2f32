"""Generators for the metapopulation SIS and bike-sharing models, plus journey ingestion."""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import expr as ex
from .errors import ConfigError
from .model import AgentType, Location, SpatialModel, Transition

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# SIS metapopulation

@dataclass
class SisConfig:
    m: int = 30
    connectivity: int = 3
    mu: float = 0.1
    beta_range: tuple[float, float] = (0.0, 1.0)
    rate_range: tuple[float, float] = (0.0, 1.0)
    population: int = 200
    infected: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if not 0 <= self.connectivity < self.m:
            raise ConfigError("connectivity must satisfy 0 <= connectivity < m")
        if self.mu <= 0:
            raise ConfigError("mu must be positive")
        for name in ("beta_range", "rate_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo < hi:
                raise ConfigError(f"{name} must be an interval 0 <= lo < hi")
        if not 0 <= self.infected <= self.population:
            raise ConfigError("need 0 <= infected <= population")


def _regular_graph(m: int, degree: int, rng: np.random.Generator,
                   max_restarts: int = 1000) -> list[tuple[int, int]]:
    """Random simple undirected graph where every node has ``degree`` neighbours.

    Stubs are paired one at a time among admissible partners, restarting when
    the pairing gets stuck.  When ``m * degree`` is odd one node ends up with
    ``degree - 1`` neighbours.
    """
    for _ in range(max_restarts):
        left = np.full(m, degree)
        if (m * degree) % 2:
            left[m - 1] -= 1
        adj = np.zeros((m, m), dtype=bool)
        stuck = False
        while left.sum() > 0:
            u = int(rng.choice(m, p=left / left.sum()))
            w = left * ~adj[u]
            w[u] = 0
            if w.sum() == 0:
                stuck = True
                break
            v = int(rng.choice(m, p=w / w.sum()))
            adj[u, v] = adj[v, u] = True
            left[u] -= 1
            left[v] -= 1
        if not stuck:
            return [(i, j) for i in range(m) for j in range(i + 1, m) if adj[i, j]]
    raise ConfigError(f"could not draw a {degree}-regular graph on {m} nodes")


def gen_sis(cfg: SisConfig) -> SpatialModel:
    """SIS epidemic over ``m`` communities joined by a random regular graph.

    Every community has ``connectivity`` neighbours and both susceptibles and
    infected move i -> j at rate r_ij * count, with r_ij and r_ji drawn
    independently.  Random draws happen in a fixed order (betas, graph, rates
    per directed edge), so the seed fixes the whole instance.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    m = cfg.m
    labels = [f"l{i + 1}" for i in range(m)]
    locations = [Location(i, labels[i]) for i in range(m)]
    agents = [AgentType(0, "S"), AgentType(1, "I")]
    S, I = 0, 1
    params: dict[str, float] = {"mu": cfg.mu}
    betas = rng.uniform(*cfg.beta_range, size=m)
    for i in range(m):
        params[f"beta_{i + 1}"] = float(betas[i])
    pairs = _regular_graph(m, cfg.connectivity, rng) if cfg.connectivity else []
    edges = sorted([(i, j) for i, j in pairs] + [(j, i) for i, j in pairs])
    for i, j in edges:
        params[f"r_{i + 1}_{j + 1}"] = float(rng.uniform(*cfg.rate_range))
    transitions: list[Transition] = []
    for i in range(m):
        lab = labels[i]
        transitions.append(Transition.make(
            f"inf_{lab}", ex.mul(ex.Param(f"beta_{i + 1}"), ex.Pop(S, i), ex.Pop(I, i)),
            {(S, i): -1, (I, i): 1}))
        transitions.append(Transition.make(
            f"rec_{lab}", ex.mul(ex.Param("mu"), ex.Pop(I, i)), {(I, i): -1, (S, i): 1}))
    for i, j in edges:
        r = ex.Param(f"r_{i + 1}_{j + 1}")
        for a, name in ((S, "S"), (I, "I")):
            transitions.append(Transition.make(
                f"mv{name}_{labels[i]}_{labels[j]}", ex.mul(r, ex.Pop(a, i)),
                {(a, i): -1, (a, j): 1}))
    initial = []
    for _ in range(m):
        initial += [cfg.population - cfg.infected, cfg.infected]
    return SpatialModel.build(locations, agents, initial, transitions, params)


# ---------------------------------------------------------------------------
# bike sharing

@dataclass
class Station:
    label: str
    coord: tuple[float, float] | None = None
    bikes: int = 10
    slots: int = 10


@dataclass
class BikeConfig:
    """Rates per hour.  ``p[i, j]`` is the destination choice probability."""

    stations: list[Station]
    lam: np.ndarray
    p: np.ndarray
    mu: np.ndarray

    def validate(self) -> None:
        n = len(self.stations)
        if n == 0:
            raise ConfigError("no stations")
        self.lam = np.asarray(self.lam, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        if self.lam.shape != (n,) or self.p.shape != (n, n) or self.mu.shape != (n, n):
            raise ConfigError("rate arrays do not match the station count")
        if np.any(self.lam < 0) or np.any(self.p < 0):
            raise ConfigError("rates and probabilities must be nonnegative")
        for i in range(n):
            s = self.p[i].sum()
            if self.lam[i] > 0 and abs(s - 1.0) > 1e-9:
                raise ConfigError(f"destination probabilities of {self.stations[i].label} sum to {s}")
        if np.any((self.p > 0) & ~(self.mu > 0)):
            raise ConfigError("trip rate must be positive wherever p > 0")
        labels = [s.label for s in self.stations]
        if len(set(labels)) != n:
            raise ConfigError("duplicate station label")
        for s in self.stations:
            if s.bikes < 0 or s.slots < 0:
                raise ConfigError(f"station {s.label}: negative bikes/slots")


def gen_bike(cfg: BikeConfig) -> SpatialModel:
    """Bike-sharing model: agent types Bike, Slot and BikeTo_<j> per destination.

    pickup  Bike@i -> Slot@i + BikeTo_j@i        at lam_i * p_i_j
    return  BikeTo_j@i + Slot@j -> Bike@j        at BikeTo_j@i * mu_i_j
    Both are emitted only for pairs with p_i_j > 0.
    """
    cfg.validate()
    st = cfg.stations
    n = len(st)
    labels = [s.label for s in st]
    locations = [Location(i, labels[i], s.coord) for i, s in enumerate(st)]
    agents = [AgentType(0, "Bike"), AgentType(1, "Slot")]
    agents += [AgentType(2 + j, f"BikeTo_{labels[j]}") for j in range(n)]
    BIKE, SLOT = 0, 1
    params: dict[str, float] = {}
    pick, ret = [], []
    for i in range(n):
        if cfg.lam[i] > 0:
            params[f"lam_{labels[i]}"] = float(cfg.lam[i])
        for j in range(n):
            if cfg.p[i, j] <= 0 or cfg.lam[i] <= 0:
                continue
            pij = f"p_{labels[i]}_{labels[j]}"
            muij = f"mu_{labels[i]}_{labels[j]}"
            params[pij] = float(cfg.p[i, j])
            params[muij] = float(cfg.mu[i, j])
            to_j = 2 + j
            pick.append(Transition.make(
                f"pick_{labels[i]}_{labels[j]}",
                ex.mul(ex.Param(f"lam_{labels[i]}"), ex.Param(pij)),
                {(BIKE, i): -1, (SLOT, i): 1, (to_j, i): 1}))
            ret.append(Transition.make(
                f"ret_{labels[i]}_{labels[j]}",
                ex.mul(ex.Pop(to_j, i), ex.Param(muij)),
                {(to_j, i): -1, (SLOT, j): -1, (BIKE, j): 1}))
    if not pick:
        raise ConfigError("no active station pairs")
    initial = []
    for s in st:
        initial += [s.bikes, s.slots] + [0] * n
    return SpatialModel.build(locations, agents, initial, pick + ret, params)


# ---------------------------------------------------------------------------
# journey records

@dataclass(frozen=True)
class JourneyRecord:
    start: str
    end: str
    duration: float  # seconds


_LABEL_RE = re.compile(r"[^A-Za-z0-9_]")


def clean_label(label: str) -> str:
    """Make a station name usable as a model identifier."""
    out = _LABEL_RE.sub("_", label.strip())
    if not out or not (out[0].isalpha() or out[0] == "_"):
        out = "s_" + out
    return out


def read_journeys(path: str | Path) -> list[JourneyRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["start", "end", "duration_sec"]:
            raise ConfigError(f"{path}: header must be start,end,duration_sec")
        for row in reader:
            records.append(JourneyRecord(row["start"].strip(), row["end"].strip(),
                                         float(row["duration_sec"])))
    return records


def write_journeys(records: Iterable[JourneyRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "end", "duration_sec"])
        for r in records:
            w.writerow([r.start, r.end, repr(float(r.duration))])


def read_stations(path: str | Path) -> list[Station]:
    """Station table CSV: ``label,x,y,bikes,slots`` (x/y may be empty)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            coord = None
            if row.get("x") and row.get("y"):
                coord = (float(row["x"]), float(row["y"]))
            out.append(Station(row["label"].strip(), coord, int(row.get("bikes") or 10),
                               int(row.get("slots") or 10)))
    return out


def write_stations(stations: Sequence[Station], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "x", "y", "bikes", "slots"])
        for s in stations:
            x, y = s.coord if s.coord else ("", "")
            w.writerow([s.label, x if x == "" else repr(x), y if y == "" else repr(y), s.bikes, s.slots])


def estimate_bike_rates(records: Sequence[JourneyRecord], horizon: float,
                        stations: Sequence[Station] | None = None) -> BikeConfig:
    """Rates from trip records observed over ``horizon`` hours.

    lam_i = departures_i / horizon, p_ij = trips_ij / departures_i and
    mu_ij = 3600 / mean duration of i->j trips (per hour).  Station order is
    ``stations`` if given, otherwise order of first appearance.
    """
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    if not records:
        raise ConfigError("no journey records")
    if stations is None:
        raw = list(dict.fromkeys(x for r in records for x in (r.start, r.end)))
        stations = [Station(clean_label(s)) for s in raw]
    else:
        stations = list(stations)
        raw = [s.label for s in stations]
    index = {lab: i for i, lab in enumerate(raw)}
    n = len(stations)
    counts = np.zeros((n, n))
    dur = np.zeros((n, n))
    for r in records:
        if r.duration <= 0:
            raise ConfigError(f"journey {r.start}->{r.end} has nonpositive duration")
        try:
            i, j = index[r.start], index[r.end]
        except KeyError as err:
            raise ConfigError(f"journey references unknown station {err.args[0]!r}") from None
        counts[i, j] += 1
        dur[i, j] += r.duration
    departures = counts.sum(axis=1)
    lam = departures / horizon
    p = np.zeros((n, n))
    mu = np.zeros((n, n))
    for i in range(n):
        if departures[i] == 0:
            log.warning("station %s has no departing trips; pickup rate set to 0", stations[i].label)
            continue
        p[i] = counts[i] / departures[i]
        has = counts[i] > 0
        mu[i, has] = 3600.0 / (dur[i, has] / counts[i, has])
    return BikeConfig(stations=list(stations), lam=lam, p=p, mu=mu)


@dataclass
class SyntheticBikeSpec:
    """Hidden-group recipe for synthetic journey data.

    Stations belong to ``groups`` demand profiles.  A profile fixes the pickup
    rate, the attractiveness as a destination and the trip durations to every
    other profile; station coordinates are drawn independently of profiles.
    Attractiveness is the profile's pickup rate times a factor from
    ``attraction_range``: profiles above 1 gain bikes over time, those below lose them.
    """

    n_stations: int = 30
    groups: int = 5
    horizon: float = 2000.0  # hours of synthetic observation
    demand_range: tuple[float, float] = (1.0, 4.0)  # pickups per hour
    attraction_range: tuple[float, float] = (0.5, 1.5)
    duration_range: tuple[float, float] = (300.0, 1800.0)  # mean trip seconds
    capacity: int = 20
    extent: float = 2.0  # side of the square holding the stations
    seed: int = 0
    group_of: list[int] = field(default_factory=list)


def synthetic_journeys(spec: SyntheticBikeSpec) -> tuple[list[Station], list[JourneyRecord]]:
    rng = np.random.default_rng(spec.seed)
    n, G = spec.n_stations, spec.groups
    group = np.sort(np.arange(n) % G)
    rng.shuffle(group)
    spec.group_of = [int(g) for g in group]
    demand = rng.uniform(*spec.demand_range, size=G)
    attract = rng.uniform(*spec.attraction_range, size=G)
    base = rng.uniform(*spec.duration_range, size=(G, G))
    base = 0.5 * (base + base.T)
    fill = rng.uniform(0.3, 0.7, size=G)
    coords = rng.uniform(0.0, spec.extent, size=(n, 2))
    labels = [f"S{i + 1:02d}" for i in range(n)]
    stations = []
    for i in range(n):
        bikes = int(round(fill[group[i]] * spec.capacity))
        stations.append(Station(labels[i], (float(coords[i, 0]), float(coords[i, 1])),
                                bikes, spec.capacity - bikes))
    weights = (demand * attract)[group]
    records: list[JourneyRecord] = []
    for i in range(n):
        k = rng.poisson(demand[group[i]] * spec.horizon)
        dest = rng.choice(n, size=k, p=weights / weights.sum())
        means = base[group[i], group[dest]]
        durations = rng.gamma(4.0, means / 4.0)
        records.extend(JourneyRecord(labels[i], labels[j], float(d)) for j, d in zip(dest, durations))
    return stations, records
