"""Distances between locations: steady-state means, Gaussian Bhattacharyya, geography."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingCoordinates, NotConverged
from .fluid import SteadyState
from .model import SpatialModel

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
EARTH_RADIUS_KM = 6371.0088


@dataclass
class DistanceMatrix:
    values: np.ndarray
    metric: str  # "mean-field" | "linear-noise" | "physical"
    labels: list[str]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("label," + ",".join(self.labels) + "\n")
            for lab, row in zip(self.labels, self.values):
                fh.write(lab + "," + ",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path, metric: str = "unknown") -> "DistanceMatrix":
        with open(path, encoding="utf-8") as fh:
            labels = fh.readline().strip().split(",")[1:]
            rows = [line.strip().split(",")[1:] for line in fh if line.strip()]
        return cls(np.array(rows, dtype=float), metric, labels)


def _per_location(values: np.ndarray, model: SpatialModel) -> np.ndarray:
    return np.asarray(values, dtype=float)[: model.size].reshape(model.n_locations, model.n_agents)


def _check(ss: SteadyState) -> None:
    if not ss.usable:
        raise NotConverged(f"{ss.source} integration did not reach equilibrium (t={ss.t_reached:g})")


def _symmetrise(d: np.ndarray) -> np.ndarray:
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def mean_field_distance(ss: SteadyState, model: SpatialModel) -> DistanceMatrix:
    """Euclidean distance between per-location steady-state mean vectors."""
    _check(ss)
    mu = _per_location(ss.mean, model)
    diff = mu[:, None, :] - mu[None, :, :]
    d = np.sqrt(np.sum(diff**2, axis=-1))
    return DistanceMatrix(_symmetrise(d), "mean-field", [loc.label for loc in model.locations])


def bhattacharyya_gaussian(mu1, var1, mu2, var2):
    """Bhattacharyya distance between N(mu1, var1) and N(mu2, var2), elementwise."""
    mu1, var1, mu2, var2 = (np.asarray(a, dtype=float) for a in (mu1, var1, mu2, var2))
    return (0.25 * np.log(0.25 * (var1 / var2 + var2 / var1 + 2.0))
            + 0.25 * (mu1 - mu2) ** 2 / (var1 + var2))


def floor_variances(var: np.ndarray, floor: float = VARIANCE_FLOOR) -> np.ndarray:
    low = var < floor
    if np.any(low):
        log.warning("%d variance(s) below %g floored (DegenerateVariance)", int(low.sum()), floor)
    return np.where(low, floor, var)


def linear_noise_distance(ss: SteadyState, model: SpatialModel,
                          floor: float = VARIANCE_FLOOR) -> DistanceMatrix:
    """Average over agent types of the per-population Gaussian Bhattacharyya distance."""
    _check(ss)
    if ss.variance is None:
        raise ConfigError("linear-noise distance needs variances from moment closure")
    mu = _per_location(ss.mean, model)
    var = floor_variances(_per_location(ss.variance, model), floor)
    db = bhattacharyya_gaussian(mu[:, None, :], var[:, None, :], mu[None, :, :], var[None, :, :])
    d = db.mean(axis=-1)
    return DistanceMatrix(_symmetrise(d), "linear-noise", [loc.label for loc in model.locations])


def physical_distance(model: SpatialModel, latlon: bool = False) -> DistanceMatrix:
    """Planar Euclidean distances, or great-circle kilometres when ``latlon``."""
    missing = [loc.label for loc in model.locations if loc.coord is None]
    if missing:
        raise MissingCoordinates(f"locations without coordinates: {', '.join(missing[:5])}")
    xy = np.array([loc.coord for loc in model.locations], dtype=float)
    if latlon:
        lat, lon = np.radians(xy[:, 0]), np.radians(xy[:, 1])
        dlat = lat[:, None] - lat[None, :]
        dlon = lon[:, None] - lon[None, :]
        h = np.sin(dlat / 2) ** 2 + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlon / 2) ** 2
        d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    else:
        d = np.sqrt(np.sum((xy[:, None, :] - xy[None, :, :]) ** 2, axis=-1))
    return DistanceMatrix(_symmetrise(d), "physical", [loc.label for loc in model.locations])
