"""Gaussian-kernel similarity, normalized-Laplacian spectral clustering (NJW), k selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .distances import DistanceMatrix
from .errors import AllZeroDistances, ConfigError, EmptyCluster, IsolatedVertex

log = logging.getLogger(__name__)

ISOLATION_THRESHOLD = 1e-12
JACOBI_TOL = 1e-12


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    sigma: float
    labels: list[str] = field(default_factory=list)

    def subset(self, keep: Sequence[int]) -> "SimilarityMatrix":
        keep = list(keep)
        return SimilarityMatrix(self.values[np.ix_(keep, keep)], self.sigma,
                                [self.labels[i] for i in keep] if self.labels else [])


def median_sigma(d: np.ndarray) -> float:
    off = d[~np.eye(len(d), dtype=bool)]
    off = off[off > 0]
    if off.size == 0:
        raise AllZeroDistances("all off-diagonal distances are zero; give sigma explicitly")
    return float(np.median(off))


def build_similarity(d: DistanceMatrix, sigma: float | str | None = "median") -> SimilarityMatrix:
    """``A_ij = exp(-d_ij^2 / (2 sigma^2))`` off the diagonal, ``A_ii = 0``."""
    if sigma is None or sigma == "median":
        s = median_sigma(d.values)
    else:
        s = float(sigma)
        if not s > 0:
            raise ConfigError("sigma must be positive")
    A = np.exp(-(d.values**2) / (2.0 * s * s))
    np.fill_diagonal(A, 0.0)
    return SimilarityMatrix(A, s, list(d.labels))


@njit(cache=True)
def _jacobi(A, tol, max_sweeps):
    n = A.shape[0]
    A = A.copy()
    V = np.eye(n)
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * A[p, q] * A[p, q]
        if np.sqrt(off) <= tol:
            return A, V, sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    return A, V, max_sweeps


def jacobi_eigh(A: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ascending eigenvalues and the matching orthonormal eigenvectors
    (columns), each column's largest-magnitude entry made positive.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, atol=1e-12):
        raise ValueError("matrix must be symmetric")
    if A.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))
    D, V, sweeps = _jacobi(0.5 * (A + A.T), tol, max_sweeps)
    if sweeps >= max_sweeps:
        log.warning("Jacobi did not reach off-diagonal norm %g in %d sweeps", tol, max_sweeps)
    w = np.diag(D).copy()
    order = np.argsort(w, kind="stable")
    w, V = w[order], V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return w, V * signs


@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    laplacian: np.ndarray
    labels: list[str] = field(default_factory=list)

    def to_csv(self, path: str | Path, top: int | None = None) -> None:
        vals = self.eigenvalues if top is None else self.eigenvalues[:top]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("index,eigenvalue\n")
            for i, v in enumerate(vals, start=1):
                fh.write(f"{i},{float(v)!r}\n")


def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    deg = A.sum(axis=1)
    bad = np.flatnonzero(deg < ISOLATION_THRESHOLD)
    if bad.size:
        raise IsolatedVertex(int(bad[0]))
    inv = 1.0 / np.sqrt(deg)
    L = np.eye(len(A)) - inv[:, None] * A * inv[None, :]
    return 0.5 * (L + L.T)


def spectral_decompose(sim: SimilarityMatrix) -> SpectralDecomposition:
    L = normalized_laplacian(sim.values)
    w, U = jacobi_eigh(L)
    return SpectralDecomposition(w, U, L, list(sim.labels))


def choose_k(eigenvalues: Sequence[float], k_min: int = 2, k_max: int | None = None) -> int:
    """Eigengap: the k in [k_min, k_max] maximising lambda_{k+1} - lambda_k.

    Eigenvalues are 1-based in that formula and must be sorted ascending.
    Near-ties (within 1e-12 of the largest gap) go to the smaller k.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    n = len(lam)
    if k_max is None:
        k_max = min(9, n - 1)
    if k_min < 2 or k_max > n - 1 or k_min > k_max:
        raise ConfigError(f"need 2 <= k_min <= k_max <= {n - 1}, got [{k_min}, {k_max}]")
    ks = np.arange(k_min, k_max + 1)
    gaps = lam[ks] - lam[ks - 1]
    best = gaps.max()
    tol = 1e-12 * max(1.0, abs(best))
    return int(ks[np.flatnonzero(gaps >= best - tol)[0]])


# ---------------------------------------------------------------------------
# k-means

def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[i] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list[float]
    restart: int


def lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    """Lloyd iterations from ``centers``; returns (labels, centers, inertia history).

    Raises EmptyCluster if a cluster loses all its points.
    """
    k = len(centers)
    labels = None
    history: list[float] = []
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
        new = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(len(points)), new].sum())
        if history:
            assert inertia <= history[-1] * (1 + 1e-12) + 1e-12, "k-means inertia increased"
        history.append(inertia)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            raise EmptyCluster("k-means produced an empty cluster")
        centers = np.array([points[labels == c].mean(axis=0) for c in range(k)])
        post = float(np.sum((points - centers[labels]) ** 2))
        assert post <= inertia * (1 + 1e-12) + 1e-12, "k-means inertia increased"
        history.append(post)
    return labels, centers, history


def kmeans(points: np.ndarray, k: int, seed: int = 0, restarts: int = 20,
           max_iter: int = 300) -> KMeansResult:
    """k-means++ seeded Lloyd with restarts; lowest inertia wins, ties to the earliest restart."""
    points = np.asarray(points, dtype=float)
    if not 1 <= k <= len(points):
        raise ConfigError(f"k={k} is out of range for {len(points)} points")
    best: KMeansResult | None = None
    for r in range(restarts):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(r,))))
        try:
            labels, centers, hist = lloyd(points, kmeans_pp_init(points, k, rng), max_iter)
        except EmptyCluster:
            log.debug("restart %d hit an empty cluster", r)
            continue
        inertia = hist[-1]
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centers, inertia, hist, r)
    if best is None:
        raise EmptyCluster(f"every one of {restarts} k-means restarts produced an empty cluster")
    return best


# ---------------------------------------------------------------------------
# clustering of locations

@dataclass(frozen=True)
class ClusterMap:
    assignment: tuple[int, ...]
    k: int
    pinned: frozenset = frozenset()

    def __post_init__(self):
        counts = np.bincount(np.asarray(self.assignment, dtype=int), minlength=self.k)
        if len(counts) != self.k or np.any(counts == 0):
            raise ConfigError("every cluster must be nonempty and indices in [0, k)")
        for p in self.pinned:
            if counts[self.assignment[p]] != 1:
                raise ConfigError(f"pinned location {p} is not a singleton")

    @classmethod
    def from_labels(cls, labels: Iterable[int], pinned: Iterable[int] = ()) -> "ClusterMap":
        """Canonical numbering: clusters ordered by their smallest member."""
        labels = list(labels)
        remap: dict[int, int] = {}
        for c in labels:
            remap.setdefault(c, len(remap))
        return cls(tuple(remap[c] for c in labels), len(remap), frozenset(pinned))

    @classmethod
    def identity(cls, n: int) -> "ClusterMap":
        return cls(tuple(range(n)), n)

    @property
    def sizes(self) -> list[int]:
        return np.bincount(np.asarray(self.assignment), minlength=self.k).tolist()

    def members(self, c: int) -> list[int]:
        return [i for i, a in enumerate(self.assignment) if a == c]

    def to_csv(self, path: str | Path, labels: Sequence[str]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("location,cluster,pinned\n")
            for i, c in enumerate(self.assignment):
                fh.write(f"{labels[i]},{c},{int(i in self.pinned)}\n")

    @classmethod
    def from_csv(cls, path: str | Path, labels: Sequence[str]) -> "ClusterMap":
        index = {lab: i for i, lab in enumerate(labels)}
        assign = [0] * len(labels)
        pinned = []
        seen = set()
        with open(path, encoding="utf-8") as fh:
            fh.readline()
            for line in fh:
                if not line.strip():
                    continue
                lab, c, pin = line.strip().split(",")
                i = index[lab]
                assign[i] = int(c)
                seen.add(i)
                if int(pin):
                    pinned.append(i)
        if len(seen) != len(labels):
            raise ConfigError("cluster table does not cover every location")
        return cls.from_labels(assign, pinned)


def njw_embedding(dec: SpectralDecomposition, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows of the first k eigenvectors scaled to unit length, plus a zero-row mask."""
    U = dec.eigenvectors[:, :k]
    norms = np.linalg.norm(U, axis=1)
    zero = norms < 1e-12
    Z = np.zeros_like(U)
    Z[~zero] = U[~zero] / norms[~zero, None]
    return Z, zero


def njw_labels(dec: SpectralDecomposition, k: int, seed: int = 0,
               distances: np.ndarray | None = None) -> np.ndarray:
    n = len(dec.eigenvalues)
    if not 2 <= k <= n:
        raise ConfigError(f"need 2 <= k <= {n}, got {k}")
    if k == n:
        return np.arange(n)
    Z, zero = njw_embedding(dec, k)
    good = np.flatnonzero(~zero)
    res = kmeans(Z[good], k, seed=seed)
    labels = np.full(n, -1)
    labels[good] = res.labels
    if zero.any():
        log.warning("%d location(s) with zero-norm spectral rows assigned to nearest neighbour",
                    int(zero.sum()))
        for i in np.flatnonzero(zero):
            if distances is not None:
                nn = good[np.argmin(distances[i, good])]
            else:
                nn = good[np.argmin(np.linalg.norm(dec.eigenvectors[good, :k] - dec.eigenvectors[i, :k], axis=1))]
            labels[i] = labels[nn]
    return labels


def isolated_vertices(A: np.ndarray, keep: Sequence[int]) -> list[int]:
    """Vertices of ``keep`` whose degree within ``keep`` is (near) zero, found repeatedly."""
    keep = list(keep)
    out: list[int] = []
    while keep:
        deg = A[np.ix_(keep, keep)].sum(axis=1)
        bad = [keep[i] for i in np.flatnonzero(deg < ISOLATION_THRESHOLD)]
        if not bad:
            break
        out += bad
        keep = [i for i in keep if i not in bad]
    return sorted(out)


def njw_cluster(sim: SimilarityMatrix, k: int, pinned: Iterable[int] = (), seed: int = 0,
                distances: np.ndarray | None = None, singletons: Iterable[int] = ()) -> ClusterMap:
    """Spectral clustering of the unpinned locations into ``k`` clusters.

    Pinned locations are dropped from the similarity graph and appended as
    singleton clusters, so the result has ``k + len(pinned)`` clusters.
    ``singletons`` are handled the same way but not marked as pinned.
    """
    pinned = sorted(set(int(p) for p in pinned))
    extra = sorted(set(int(p) for p in singletons) - set(pinned))
    n = len(sim.values)
    rest = [i for i in range(n) if i not in pinned and i not in extra]
    if k > len(rest):
        raise ConfigError(f"k={k} exceeds the {len(rest)} unpinned locations")
    if k == len(rest):
        labels = np.arange(len(rest))
    else:
        sub = sim.subset(rest)
        dsub = None if distances is None else np.asarray(distances)[np.ix_(rest, rest)]
        labels = njw_labels(spectral_decompose(sub), k, seed, dsub)
    full = np.empty(n, dtype=int)
    full[rest] = labels
    for j, p in enumerate(pinned + extra):
        full[p] = k + j
    return ClusterMap.from_labels(full, pinned)
