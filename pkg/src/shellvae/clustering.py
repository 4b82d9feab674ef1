"""Lloyd's K-means and the feasible-region statistics TSS, W and delta_collapse."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

TINY = 1e-300


class EmptyClusterError(RuntimeError):
    pass


@dataclass
class Clustering:
    assignments: np.ndarray  # (N,) int
    centers: np.ndarray  # (K, d)
    proportions: np.ndarray  # (K,)
    iterations_run: int = 0
    inertia_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centers.shape[0]


@dataclass
class FeasibleRegion:
    tss: float
    w: float
    delta_collapse: float
    data_mean: np.ndarray
    clustering: Clustering

    @property
    def is_feasible(self) -> bool:
        """Theorem precondition: a non-empty open interval (W, delta_collapse)."""
        return self.w < self.delta_collapse

    @property
    def epsilon(self) -> float:
        return 0.5 * (self.w + self.delta_collapse)


def _sq_distances(data: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # explicit differences rather than the |a|^2 - 2ab + |b|^2 expansion: exact ties stay exact
    out = np.empty((data.shape[0], centers.shape[0]))
    for k, c in enumerate(centers):
        diff = data - c
        out[:, k] = np.einsum("ij,ij->i", diff, diff)
    return out


def _kmeans_pp(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    idx = [int(rng.integers(n))]
    d2 = _sq_distances(data, data[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # remaining points coincide with chosen centers; take unused indices in order
            unused = np.setdiff1d(np.arange(n), idx)
            nxt = int(unused[0])
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_distances(data, data[nxt : nxt + 1])[:, 0])
    return data[idx].copy()


def centers_from_assignments(data: np.ndarray, assignments: np.ndarray, k: int) -> np.ndarray:
    centers = np.zeros((k, data.shape[1]))
    counts = np.bincount(assignments, minlength=k)
    np.add.at(centers, assignments, data)
    nonempty = counts > 0
    centers[nonempty] /= counts[nonempty, None]
    return centers


def _fill_empty(data, assignments, centers, k):
    """Move the point farthest from its center into each empty cluster."""
    for _ in range(k):
        counts = np.bincount(assignments, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return assignments, centers
        dist = np.einsum("ij,ij->i", data - centers[assignments], data - centers[assignments])
        # donor clusters must keep at least one point
        dist[counts[assignments] <= 1] = -1.0
        far = int(np.argmax(dist))
        if dist[far] < 0:
            break
        assignments[far] = empty[0]
        centers = centers_from_assignments(data, assignments, k)
    if np.any(np.bincount(assignments, minlength=k) == 0):
        raise EmptyClusterError("could not repair empty clusters")
    return assignments, centers


def make_clustering(data: np.ndarray, assignments: np.ndarray, k: int, iterations: int = 0) -> Clustering:
    assignments = np.asarray(assignments, dtype=np.int64)
    centers = centers_from_assignments(data, assignments, k)
    props = np.bincount(assignments, minlength=k) / len(assignments)
    return Clustering(assignments, centers, props, iterations)


def within_ss(data: np.ndarray, assignments: np.ndarray, centers: np.ndarray) -> float:
    diff = data - centers[assignments]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeans(
    data: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 300,
    tol: float = 1e-8,
) -> Clustering:
    """Lloyd iterations from k-means++ seeding.

    Stops when the largest center displacement drops below ``tol``. Distance
    ties go to the lowest cluster index.
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if k < 1:
        raise ValueError("K must be at least 1")
    if k > n:
        raise ValueError(f"K={k} exceeds the number of samples N={n}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(data, k, rng)
    assignments = np.argmin(_sq_distances(data, centers), axis=1)
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        assignments, new_centers = _fill_empty(
            data, assignments, centers_from_assignments(data, assignments, k), k
        )
        history.append(within_ss(data, assignments, new_centers))
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        assignments = np.argmin(_sq_distances(data, centers), axis=1)
        if shift < tol:
            break
    else:
        log.debug("kmeans hit max_iters=%d", max_iters)
    assignments, _ = _fill_empty(data, assignments, centers_from_assignments(data, assignments, k), k)
    result = make_clustering(data, assignments, k, it)
    result.inertia_history = history
    return result


def feasible_region(data: np.ndarray, clustering: Clustering) -> FeasibleRegion:
    data = np.asarray(data, dtype=np.float64)
    a = clustering.assignments
    if a.shape != (data.shape[0],):
        raise ValueError(
            f"clustering has {a.shape[0]} assignments for {data.shape[0]} samples"
        )
    n = data.shape[0]
    mean = data.mean(axis=0)
    dev = data - mean
    tss = float(np.einsum("ij,ij->", dev, dev)) / n
    w = within_ss(data, a, clustering.centers) / n
    between = clustering.centers - mean
    delta = float(clustering.proportions @ np.einsum("ij,ij->i", between, between))
    return FeasibleRegion(tss, w, delta, mean, clustering)


def verify_identity(region: FeasibleRegion) -> float:
    """Relative residual |TSS - (W + delta)| / TSS."""
    return abs(region.tss - (region.w + region.delta_collapse)) / max(region.tss, TINY)
