"""k-means over encoded reviews with silhouette-based choice of k.

Encoded reviews are binary and heavily duplicated, so both k-means and the
silhouette work on the distinct rows weighted by multiplicity. Results are
identical to running on the expanded data.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import EncodedVector

log = logging.getLogger(__name__)

_CHUNK_ELEMS = 1 << 22


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centers: np.ndarray
    assignment: np.ndarray
    inertia: float
    seed: int
    iterations_run: int
    inertia_history: tuple[float, ...] = ()

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


@dataclass(frozen=True)
class SilhouetteReport:
    scores: dict[int, float]
    chosen_k: int
    inertias: dict[int, float] = field(default_factory=dict)


def as_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        X = vectors
    else:
        vectors = list(vectors)
        if vectors and isinstance(vectors[0], EncodedVector):
            X = np.stack([v.full for v in vectors]) if vectors else np.empty((0, 0))
        else:
            X = np.asarray(vectors)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _unique_rows(X: np.ndarray):
    """Distinct rows (byte order), their counts and the inverse map."""
    X = np.ascontiguousarray(X)
    if X.shape[1] == 0:
        return X[:1], np.array([len(X)]), np.zeros(len(X), dtype=np.int64)
    rows = X.view(np.dtype((np.void, X.dtype.itemsize * X.shape[1]))).reshape(-1)
    _, first, inverse, counts = np.unique(rows, return_index=True, return_inverse=True,
                                          return_counts=True)
    return X[first], counts, inverse.reshape(-1)


def _dedupe(X: np.ndarray):
    U, counts, inverse = _unique_rows(X)
    return U, counts.astype(np.float64), inverse


def _sqdist(A: np.ndarray, C: np.ndarray, a_norm: np.ndarray | None = None) -> np.ndarray:
    """Squared distances via the expanded form; may be off by rounding."""
    if a_norm is None:
        a_norm = np.einsum("ij,ij->i", A, A)
    d2 = a_norm[:, None] - 2.0 * (A @ C.T) + np.einsum("ij,ij->i", C, C)[None, :]
    return np.maximum(d2, 0.0)


def _exact_sqdist(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    out = np.empty((A.shape[0], C.shape[0]))
    step = max(1, _CHUNK_ELEMS // max(1, C.shape[0] * A.shape[1]))
    for s in range(0, A.shape[0], step):
        diff = A[s:s + step, None, :] - C[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _euclid(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.shape[0] * B.shape[0] * A.shape[1] <= _CHUNK_ELEMS:
        return np.sqrt(_exact_sqdist(A, B))
    na, nb = (A * A).sum(axis=1), (B * B).sum(axis=1)
    d2 = na[:, None] - 2.0 * (A @ B.T) + nb[None, :]
    # cancellation noise near zero would otherwise survive the sqrt
    d2[d2 <= 1e-12 * (1.0 + na[:, None] + nb[None, :])] = 0.0
    return np.sqrt(d2)


def nearest(A: np.ndarray, C: np.ndarray, a_norm: np.ndarray | None = None,
            exact: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest center per row (lowest index on ties) and its squared distance.

    Rows whose two best candidates are within rounding of each other are
    re-evaluated exactly, so ties resolve the same way as a direct scan.
    """
    d2 = _sqdist(A, C, a_norm)
    labels = d2.argmin(axis=1)
    if C.shape[0] > 1:
        part = np.partition(d2, 1, axis=1)
        scale = 1.0 + part[:, 1]
        close = np.flatnonzero(part[:, 1] - part[:, 0] <= 1e-9 * scale)
        if len(close):
            labels[close] = _exact_sqdist(A[close], C).argmin(axis=1)
    if not exact:
        return labels, d2[np.arange(len(A)), labels]
    diff = A - C[labels]
    return labels, np.einsum("ij,ij->i", diff, diff)


def _kmeanspp(U, w, k, rng, u_norm) -> np.ndarray:
    idx = [int(rng.choice(len(U), p=w / w.sum()))]
    d2 = _sqdist(U, U[idx], u_norm)[:, 0]
    for _ in range(1, k):
        p = w * d2
        total = p.sum()
        if total <= 0:
            raise ClusteringError("fewer distinct vectors than clusters")
        j = int(rng.choice(len(U), p=p / total))
        idx.append(j)
        d2 = np.minimum(d2, _sqdist(U, U[j:j + 1], u_norm)[:, 0])
    return U[idx].copy()


def _lloyd(U, w, k, rng, max_iter, tol):
    u_norm = np.einsum("ij,ij->i", U, U)
    centers = _kmeanspp(U, w, k, rng, u_norm)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        labels, best = nearest(U, centers, u_norm, exact=False)
        history.append(float(w @ best))
        mass = np.bincount(labels, weights=w, minlength=k)
        onehot = np.zeros((len(U), k))
        onehot[np.arange(len(U)), labels] = w
        sums = onehot.T @ U
        new = np.empty_like(centers)
        for c in range(k):
            if mass[c] > 0:
                new[c] = sums[c] / mass[c]
            else:
                # empty cluster: move it onto the worst-served row
                far = int(np.argmax(best))
                new[c] = U[far]
                best[far] = 0.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    labels, best = nearest(U, centers, u_norm)
    inertia = float(w @ best)
    history.append(inertia)
    return centers, labels, inertia, it, history


def _validate(X: np.ndarray, k: int, max_iter: int):
    if X.shape[0] == 0:
        raise ClusteringError("no vectors to cluster")
    if k < 1:
        raise ClusteringError("k must be positive")
    if max_iter < 1:
        raise ClusteringError("max_iter must be >= 1")


def _scaled(X, coord_scale):
    if coord_scale is None:
        return X, None
    s = np.sqrt(np.asarray(coord_scale, dtype=np.float64))
    if s.shape != (X.shape[1],):
        raise ClusteringError("coord_scale must have one entry per coordinate")
    if np.any(s <= 0):
        raise ClusteringError("coord_scale entries must be positive")
    return X * s, s


def kmeans(vectors, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6,
           coord_scale: Sequence[float] | None = None, restarts: int = 1) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia.

    `coord_scale` multiplies each coordinate's contribution to the squared
    distance. Centers are reported in the original coordinates.
    """
    X = as_matrix(vectors)
    _validate(X, k, max_iter)
    Xs, s = _scaled(X, coord_scale)
    U, w, inverse = _dedupe(Xs)
    return _fit(U, w, inverse, s, k, seed, max_iter, tol, restarts)


def _fit(U, w, inverse, s, k, seed, max_iter, tol, restarts) -> ClusterModel:
    if k > len(U):
        raise ClusteringError(f"k={k} exceeds the number of distinct vectors ({len(U)})")
    best = None
    for child in np.random.SeedSequence(seed).spawn(max(1, restarts)):
        rng = np.random.default_rng(child)
        run = _lloyd(U, w, k, rng, max_iter, tol)
        if best is None or run[2] < best[2]:
            best = run
    centers, labels, inertia, it, history = best
    if s is not None:
        centers = centers / s
    model = ClusterModel(k=k, centers=centers, assignment=labels[inverse].astype(np.int64),
                         inertia=inertia, seed=seed, iterations_run=it,
                         inertia_history=tuple(history))
    object.__setattr__(model, "_unique_labels", labels)
    return model


def silhouette_score(vectors, assignment, sample_cap: int = 10_000, seed: int = 0,
                     coord_scale: Sequence[float] | None = None) -> float:
    """Mean silhouette with Euclidean dissimilarity.

    Points in singleton clusters score 0, as do points with a = b = 0. When
    the data has more than `sample_cap` distinct (vector, label) pairs, a
    seeded uniform subsample of `sample_cap` points is scored instead.
    """
    X = as_matrix(vectors)
    labels = np.asarray(assignment, dtype=np.int64).reshape(-1)
    if len(labels) != len(X):
        raise ClusteringError("assignment length does not match vectors")
    if len(np.unique(labels)) < 2:
        raise ClusteringError("silhouette needs at least two clusters")
    X, _ = _scaled(X, coord_scale)
    keyed = np.column_stack([labels.astype(np.float64), X])
    G, counts, _ = _unique_rows(keyed)
    if len(G) > sample_cap:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(X), size=sample_cap, replace=False))
        G, counts, _ = _unique_rows(keyed[pick])
    return _grouped_silhouette(G[:, 1:], counts.astype(np.float64), G[:, 0].astype(np.int64))


def _grouped_silhouette(pts: np.ndarray, counts: np.ndarray, g_lab: np.ndarray) -> float:
    """Silhouette of a multiset given as distinct points with multiplicities."""
    clusters, g_idx = np.unique(g_lab, return_inverse=True)
    if len(clusters) < 2:
        raise ClusteringError("silhouette needs at least two clusters")
    K = len(clusters)
    n = len(pts)
    member = np.zeros((n, K))
    member[np.arange(n), g_idx] = counts
    n_c = member.sum(axis=0)
    sums = np.empty((n, K))
    step = max(1, _CHUNK_ELEMS // max(1, n))
    for s in range(0, n, step):
        sums[s:s + step] = _euclid(pts[s:s + step], pts) @ member
    own_n = n_c[g_idx]
    rows = np.arange(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(own_n > 1, sums[rows, g_idx] / np.maximum(own_n - 1, 1), 0.0)
        other = sums / n_c
        other[rows, g_idx] = np.inf
        b = other.min(axis=1)
        denom = np.maximum(a, b)
        s_val = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s_val = np.where(own_n > 1, s_val, 0.0)
    return float((counts * s_val).sum() / counts.sum())


def select_k(vectors, k_range: Iterable[int], seed: int = 0, restarts: int = 8,
             max_iter: int = 300, tol: float = 1e-6, sample_cap: int = 10_000,
             coord_scale: Sequence[float] | None = None
             ) -> tuple[SilhouetteReport, ClusterModel]:
    """Fit each k (best of `restarts`) and keep the one with the top silhouette.

    Ties go to the smaller k. k = 1 has no silhouette and is only chosen when
    it is the sole candidate.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ClusteringError("k_range is empty")
    X = as_matrix(vectors)
    _validate(X, ks[0], max_iter)
    Xs, s = _scaled(X, coord_scale)
    U, w, inverse = _dedupe(Xs)
    if len(U) > sample_cap:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(X), size=sample_cap, replace=False))
        sub_rows, sub_counts = np.unique(inverse[pick], return_counts=True)
    else:
        sub_rows, sub_counts = np.arange(len(U)), w
    scores: dict[int, float] = {}
    inertias: dict[int, float] = {}
    models: dict[int, ClusterModel] = {}
    for k in ks:
        model = _fit(U, w, inverse, s, k, seed, max_iter, tol, restarts)
        models[k] = model
        inertias[k] = model.inertia
        labels = model._unique_labels[sub_rows]
        if k == 1 or len(np.unique(labels)) < 2:
            scores[k] = float("nan")
        else:
            # labels are constant over copies of a row, so rows are the groups
            scores[k] = _grouped_silhouette(U[sub_rows], np.asarray(sub_counts, dtype=float),
                                            labels)
        log.debug("k=%d inertia=%.4f silhouette=%.4f", k, model.inertia, scores[k])
    scored = [k for k in ks if not np.isnan(scores[k])]
    if scored:
        chosen = max(scored, key=lambda k: (scores[k], -k))
    elif len(ks) == 1:
        chosen = ks[0]
    else:
        raise ClusteringError("no candidate k produced a silhouette score")
    return SilhouetteReport(scores=scores, chosen_k=chosen, inertias=inertias), models[chosen]
