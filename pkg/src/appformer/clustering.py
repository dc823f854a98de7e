"""
Clustering of station POI vectors.

K-Modes treats every count as a categorical symbol: the distance between
two vectors is the number of positions where they differ, and a center is
the per-position mode of its members. The K-Means family (Lloyd, K-Means++
seeding, mini-batch, K-Harmonic Means) treats counts as reals.

All fits are deterministic functions of ``(X, k, seed, params)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

ALGORITHMS = ("kmodes", "kmeans", "kmeanspp", "minibatch_kmeans", "kharmonic")
# cluster-count sweep; 0 means no clustering (raw vectors pass through)
CLUSTER_COUNT_SWEEP = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55)


@dataclass
class ClusterModel:
    algorithm: str
    k: int
    seed: int
    centers: np.ndarray
    labels: np.ndarray  # cluster index per row of X
    cost: float
    iterations: int
    cost_history: list[float] = field(default_factory=list)
    station_ids: list[int] | None = None

    @property
    def assignments(self) -> dict[int, int]:
        ids = self.station_ids if self.station_ids is not None else range(len(self.labels))
        return {int(s): int(c) for s, c in zip(ids, self.labels)}

    def to_json(self) -> dict:
        centers = self.centers.astype(int).tolist() if self.algorithm == "kmodes" else self.centers.tolist()
        return {
            "algorithm": self.algorithm,
            "k": self.k,
            "seed": self.seed,
            "centers": centers,
            "assignments": {str(s): c for s, c in self.assignments.items()},
            "cost": self.cost,
            "iterations": self.iterations,
            "cost_history": self.cost_history,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ClusterModel":
        ids = [int(s) for s in d["assignments"]]
        return cls(
            algorithm=d["algorithm"],
            k=int(d["k"]),
            seed=int(d["seed"]),
            centers=np.asarray(d["centers"], dtype=float),
            labels=np.array([d["assignments"][str(s)] for s in ids], dtype=np.int64),
            cost=float(d["cost"]),
            iterations=int(d["iterations"]),
            cost_history=list(d.get("cost_history", [])),
            station_ids=ids,
        )


def _validate(X, k: int) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2:
        raise ShapeError(f"expected an n x d matrix, got shape {X.shape}")
    if k <= 0:
        raise ConfigError(f"k must be positive, got {k}")
    if k > X.shape[0]:
        raise ConfigError(f"k={k} exceeds the number of points n={X.shape[0]}")
    return X


# -- k-modes -----------------------------------------------------------------------
def mismatch_distance(x, z) -> np.ndarray:
    """Number of positions where ``x`` and ``z`` differ (broadcasts over leading axes)."""
    return (np.asarray(x) != np.asarray(z)).sum(axis=-1)


def _mismatch_matrix(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    return (X[:, None, :] != Z[None, :, :]).sum(axis=2)


def column_mode(values: np.ndarray) -> int:
    """Most frequent value; the smallest value wins ties."""
    uniq, counts = np.unique(values, return_counts=True)
    return uniq[np.argmax(counts)]


def _initial_rows(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k row indices in random order, preferring rows with distinct values."""
    order = rng.permutation(X.shape[0])
    chosen, seen = [], set()
    for i in order:
        key = X[i].tobytes()
        if key not in seen:
            seen.add(key)
            chosen.append(i)
            if len(chosen) == k:
                return np.array(chosen)
    rest = [i for i in order if i not in set(chosen)]
    return np.array(chosen + rest[: k - len(chosen)])


def kmodes_fit(X, k: int, seed: int = 0, max_iter: int = 100, n_init: int = 10) -> ClusterModel:
    """K-Modes with random data-point initialisation.

    Each run assigns every point to its nearest mode (lowest index wins
    ties), recomputes per-position modes, and reseeds any empty cluster with
    the point farthest from its current mode, stopping when modes stop
    changing. ``n_init`` runs start from independent draws of the seeded
    generator; the lowest final cost wins (earliest run on ties).
    """
    X = _validate(X, k)
    if n_init < 1:
        raise ConfigError(f"n_init must be >= 1, got {n_init}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _kmodes_run(X, k, X[_initial_rows(X, k, rng)].copy(), max_iter)
        if best is None or run[2] < best[2]:
            best = run
    Z, labels, cost, it, history = best
    return ClusterModel("kmodes", k, seed, Z, labels, cost, it, history)


def _kmodes_run(X, k, Z, max_iter):
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        labels = _mismatch_matrix(X, Z).argmin(axis=1)
        new_Z = Z.copy()
        for j in range(k):
            members = X[labels == j]
            if len(members):
                new_Z[j] = [column_mode(members[:, q]) for q in range(X.shape[1])]
        labels = _repair_empty(X, new_Z, labels, k, _mismatch_matrix)
        history.append(float(mismatch_distance(X, new_Z[labels]).sum()))
        changed = not np.array_equal(new_Z, Z)
        Z = new_Z
        if not changed:
            break
    labels = _mismatch_matrix(X, Z).argmin(axis=1)
    cost = float(mismatch_distance(X, Z[labels]).sum())
    if not history or cost != history[-1]:
        history.append(cost)
    return Z, labels, cost, it, history


def _repair_empty(X, Z, labels, k, dist) -> np.ndarray:
    """Give each empty cluster the point farthest from its own center; updates ``Z`` in place."""
    labels = labels.copy()
    for j in range(k):
        if np.any(labels == j):
            continue
        own = dist(X, Z)[np.arange(len(X)), labels]
        # only take points whose cluster keeps at least one member
        sizes = np.bincount(labels, minlength=k)
        own = np.where(sizes[labels] > 1, own, -np.inf)
        far = int(np.argmax(own))
        if not np.isfinite(own[far]):
            continue
        labels[far] = j
        Z[j] = X[far]
    return labels


# -- k-means family -----------------------------------------------------------------
def _sq_dist(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ Z.T + (Z * Z).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _lloyd(X, Z, k, max_iter, tol):
    history = []
    it = 0
    labels = _sq_dist(X, Z).argmin(axis=1)
    for it in range(1, max_iter + 1):
        labels = _sq_dist(X, Z).argmin(axis=1)
        new_Z = Z.copy()
        for j in range(k):
            members = X[labels == j]
            if len(members):
                new_Z[j] = members.mean(axis=0)
        labels = _repair_empty(X, new_Z, labels, k, _sq_dist)
        for j in range(k):
            members = X[labels == j]
            if len(members):
                new_Z[j] = members.mean(axis=0)
        history.append(float(((X - new_Z[labels]) ** 2).sum()))
        shift = float(np.abs(new_Z - Z).max())
        Z = new_Z
        if shift <= tol:
            break
    labels = _sq_dist(X, Z).argmin(axis=1)
    cost = float(((X - Z[labels]) ** 2).sum())
    if not history or cost < history[-1]:
        history.append(cost)
    return Z, labels, cost, it, history


def kmeans_fit(X, k: int, seed: int = 0, max_iter: int = 300, tol: float = 0.0) -> ClusterModel:
    """Lloyd iterations from k distinct random data points."""
    X = _validate(X, k).astype(float)
    rng = np.random.default_rng(seed)
    Z = X[_initial_rows(X, k, rng)].copy()
    Z, labels, cost, it, hist = _lloyd(X, Z, k, max_iter, tol)
    return ClusterModel("kmeans", k, seed, Z, labels, cost, it, hist)


def kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2 seeding. Falls back to uniform choice when all remaining distances are zero."""
    centers = [X[rng.integers(X.shape[0])]]
    d2 = _sq_dist(X, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(X.shape[0], p=d2 / total)
        else:
            idx = rng.integers(X.shape[0])
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dist(X, X[idx][None, :])[:, 0])
    return np.array(centers, dtype=float)


def kmeanspp_fit(X, k: int, seed: int = 0, max_iter: int = 300, tol: float = 0.0) -> ClusterModel:
    X = _validate(X, k).astype(float)
    rng = np.random.default_rng(seed)
    Z = kmeanspp_init(X, k, rng)
    Z, labels, cost, it, hist = _lloyd(X, Z, k, max_iter, tol)
    return ClusterModel("kmeanspp", k, seed, Z, labels, cost, it, hist)


def minibatch_kmeans_fit(X, k: int, seed: int = 0, batch_size: int = 32, max_iter: int = 100) -> ClusterModel:
    """Mini-batch updates with per-center learning rate 1/count."""
    X = _validate(X, k).astype(float)
    rng = np.random.default_rng(seed)
    Z = X[_initial_rows(X, k, rng)].copy()
    counts = np.zeros(k)
    history = []
    b = min(batch_size, X.shape[0])
    for _ in range(max_iter):
        batch = X[rng.choice(X.shape[0], size=b, replace=False)]
        nearest = _sq_dist(batch, Z).argmin(axis=1)
        for x, j in zip(batch, nearest):
            counts[j] += 1
            Z[j] += (x - Z[j]) / counts[j]
        labels = _sq_dist(X, Z).argmin(axis=1)
        history.append(float(((X - Z[labels]) ** 2).sum()))
    labels = _sq_dist(X, Z).argmin(axis=1)
    labels = _repair_empty(X, Z, labels, k, _sq_dist)
    cost = float(((X - Z[labels]) ** 2).sum())
    return ClusterModel("minibatch_kmeans", k, seed, Z, labels, cost, max_iter, history)


def kharmonic_objective(X: np.ndarray, Z: np.ndarray, p: float = 2.0, floor: float = 1e-12) -> float:
    d = np.sqrt(np.maximum(_sq_dist(X, Z), floor))
    return float((Z.shape[0] / (d ** -p).sum(axis=1)).sum())


def kharmonic_fit(X, k: int, seed: int = 0, p: float = 2.0, max_iter: int = 100, tol: float = 1e-9, floor: float = 1e-12) -> ClusterModel:
    """K-Harmonic Means with the fixed-point center update.

    Each center moves to the weighted mean of all points with weights
    ``d_ij^-(p+2) / (sum_l d_il^-p)^2``; distances are floored to avoid
    division by zero on duplicate points.
    """
    X = _validate(X, k).astype(float)
    rng = np.random.default_rng(seed)
    Z = X[_initial_rows(X, k, rng)].copy()
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = np.sqrt(np.maximum(_sq_dist(X, Z), floor))
        inv_p = d ** -p
        q = d ** -(p + 2) / (inv_p.sum(axis=1, keepdims=True) ** 2)
        new_Z = (q.T @ X) / q.sum(axis=0)[:, None]
        history.append(kharmonic_objective(X, new_Z, p, floor))
        shift = float(np.abs(new_Z - Z).max())
        Z = new_Z
        if shift <= tol:
            break
    labels = _sq_dist(X, Z).argmin(axis=1)
    return ClusterModel("kharmonic", k, seed, Z, labels, kharmonic_objective(X, Z, p, floor), it, history)


def fit(algorithm: str, X, k: int, seed: int = 0, **params) -> ClusterModel:
    fns = {
        "kmodes": kmodes_fit,
        "kmeans": kmeans_fit,
        "kmeanspp": kmeanspp_fit,
        "minibatch_kmeans": minibatch_kmeans_fit,
        "kharmonic": kharmonic_fit,
    }
    if algorithm not in fns:
        raise ConfigError(f"unknown clustering algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    return fns[algorithm](X, k, seed, **params)


# -- POI replacement and projection ---------------------------------------------------
def poi_matrix(poi_map) -> tuple[list[int], np.ndarray]:
    ids = sorted(poi_map)
    return ids, np.array([poi_map[s].counts for s in ids], dtype=np.int64)


def fit_poi(poi_map, algorithm: str = "kmodes", k: int = 5, seed: int = 0, **params) -> ClusterModel:
    ids, X = poi_matrix(poi_map)
    model = fit(algorithm, X, k, seed, **params)
    model.station_ids = ids
    return model


def replace_with_centers(model: ClusterModel | None, poi_map, stations=None) -> dict[int, np.ndarray]:
    """Map every station to its cluster center; ``model=None`` passes raw vectors through."""
    stations = sorted(poi_map) if stations is None else list(stations)
    if model is None:
        out = {}
        for s in stations:
            if s not in poi_map:
                raise KeyError(f"station {s} has no POI vector")
            out[s] = np.asarray(poi_map[s].counts, dtype=float)
        return out
    assign = model.assignments
    out = {}
    for s in stations:
        if s not in assign:
            raise KeyError(f"station {s} is not covered by the cluster model")
        out[s] = np.asarray(model.centers[assign[s]], dtype=float)
    return out


@dataclass
class PcaResult:
    coords: np.ndarray  # n x 2
    explained_variance: tuple[float, float]
    components: np.ndarray  # 2 x d
    mean: np.ndarray


def pca_project(X, n_components: int = 2) -> PcaResult:
    """Project onto the top principal directions of the sample covariance.

    Each direction's largest-magnitude entry is made positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ShapeError(f"PCA needs at least two rows, got shape {X.shape}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    comps = evecs[:, order].T.copy()
    ev = np.maximum(evals[order], 0.0)
    for i in range(comps.shape[0]):
        if ev[i] <= 1e-12 * max(1.0, float(evals.max(initial=0.0))):
            comps[i] = 0.0
            ev[i] = 0.0
            continue
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    coords = Xc @ comps.T
    return PcaResult(coords, tuple(float(v) for v in ev), comps, mean)


def write_clusters_json(path, model: ClusterModel) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_pca_csv(path, station_ids, pca: PcaResult, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("station_id,pc1,pc2,cluster\n")
        for s, (a, b), c in zip(station_ids, pca.coords, labels):
            fh.write(f"{s},{a:.10g},{b:.10g},{int(c)}\n")
