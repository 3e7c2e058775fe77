"""k-medoids clustering (PAM swap phase, k-means++ seeding) and cluster-count diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

# relative improvement a swap must achieve to be accepted
SWAP_TOL = 1e-12


@dataclass
class ClusterAssignment:
    k: int
    medoids: np.ndarray  # dataset indices
    labels: np.ndarray  # position into ``medoids`` for every point
    within: np.ndarray  # per-cluster sum of point-to-medoid distances
    max_dist: np.ndarray  # per-cluster max point-to-medoid distance
    total: float
    swaps: int = 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def distance_matrix(points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return cdist(X, X)


def kmeanspp_init(D: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    m = len(D)
    chosen = [int(rng.integers(m))]
    closest = D[chosen[0]].copy()
    while len(chosen) < k:
        w = closest ** 2
        total = w.sum()
        if total <= 0:
            # all remaining points coincide with a medoid
            nxt = next(i for i in range(m) if i not in chosen)
        else:
            nxt = int(rng.choice(m, p=w / total))
        chosen.append(nxt)
        closest = np.minimum(closest, D[nxt])
    return chosen


def _assign(D: np.ndarray, medoids: np.ndarray) -> ClusterAssignment:
    sub = D[:, medoids]
    labels = np.argmin(sub, axis=1)
    labels[medoids] = np.arange(len(medoids))
    d = sub[np.arange(len(D)), labels]
    k = len(medoids)
    within = np.bincount(labels, weights=d, minlength=k)
    max_dist = np.zeros(k)
    np.maximum.at(max_dist, labels, d)
    return ClusterAssignment(k=k, medoids=medoids.copy(), labels=labels, within=within,
                             max_dist=max_dist, total=float(d.sum()))


def _swap_gains(D: np.ndarray, medoids: np.ndarray, i: int) -> np.ndarray:
    """Total distance after replacing ``medoids[i]`` by each point in turn."""
    others = np.delete(medoids, i)
    base = D[:, others].min(axis=1) if len(others) else np.full(len(D), np.inf)
    return np.minimum(D, base[None, :]).sum(axis=1)


def kmedoids(points=None, k: int = 2, seed: int = 0, D: np.ndarray | None = None,
             init: list[int] | None = None, max_swaps: int = 100_000) -> ClusterAssignment:
    """PAM with first-improvement swaps scanned in fixed (medoid slot, candidate index) order."""
    if D is None:
        D = distance_matrix(points)
    m = len(D)
    if not 1 <= k <= m:
        raise ValueError(f"k={k} must lie in [1, {m}]")
    if init is None:
        medoids = np.array(kmeanspp_init(D, k, np.random.default_rng(seed)))
    else:
        medoids = np.array(init, dtype=int)
        if len(medoids) != k or len(set(medoids.tolist())) != k:
            raise ValueError("init must hold k distinct indices")
    total = _assign(D, medoids).total
    swaps = 0
    improved = True
    while improved and swaps < max_swaps:
        improved = False
        for i in range(k):
            totals = _swap_gains(D, medoids, i)
            totals[medoids] = np.inf
            better = np.flatnonzero(totals < total - SWAP_TOL * max(1.0, abs(total)))
            if len(better):
                medoids[i] = better[0]
                total = float(totals[better[0]])
                swaps += 1
                improved = True
    out = _assign(D, medoids)
    out.swaps = swaps
    return out


def swap_audit(D: np.ndarray, a: ClusterAssignment) -> tuple[int, int, float] | None:
    """Exhaustively look for a single swap that strictly lowers the total; ``None`` if optimal."""
    med = set(a.medoids.tolist())
    for i in range(a.k):
        for h in range(len(D)):
            if h in med:
                continue
            trial = a.medoids.copy()
            trial[i] = h
            t = float(D[:, trial].min(axis=1).sum())
            if t < a.total - SWAP_TOL * max(1.0, abs(a.total)):
                return i, h, t
    return None


def silhouette(D: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette; singletons score 0, and an all-singleton partition scores 1 by convention."""
    m = len(D)
    k = int(labels.max()) + 1
    if k == m:
        return 1.0
    if k == 1:
        return 0.0
    sizes = np.bincount(labels, minlength=k)
    sums = np.stack([D[:, labels == c].sum(axis=1) for c in range(k)], axis=1)
    own = sizes[labels]
    a = np.where(own > 1, sums[np.arange(m), labels] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / np.where(sizes > 0, sizes, 1)[None, :]
    mean_other[np.arange(m), labels] = np.inf
    mean_other[:, sizes == 0] = np.inf
    b = mean_other.min(axis=1)
    s = np.where(own > 1, (b - a) / np.maximum(np.maximum(a, b), 1e-300), 0.0)
    return float(s.mean())


@dataclass(frozen=True)
class DiagnosticRow:
    k: int
    seed: int
    total: float
    max_dist: float
    silhouette: float


def diagnostics(points, k_range, seeds, D: np.ndarray | None = None) -> list[DiagnosticRow]:
    if D is None:
        D = distance_matrix(points)
    rows = []
    for k in k_range:
        if not 1 <= k <= len(D):
            raise ValueError(f"k={k} outside [1, {len(D)}]")
        for s in seeds:
            a = kmedoids(k=k, seed=s, D=D)
            rows.append(DiagnosticRow(k, s, a.total, float(a.max_dist.max()), silhouette(D, a.labels)))
    return rows


def save_diagnostics(rows: list[DiagnosticRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "seed", "total", "max_dist", "silhouette"])
        for r in rows:
            w.writerow([r.k, r.seed, repr(r.total), repr(r.max_dist), repr(r.silhouette)])
