"""k-means, elbow selection and cluster validity indices."""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, CustsegError, UndefinedMetricError
from .features import FeatureMatrix

log = logging.getLogger(__name__)

MAX_ITER = 300
DEFAULT_K_RANGE = tuple(range(2, 7))


def _values(x):
    return x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=float).reshape(len(x), -1)


def _sq_dists(X, C):
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


@dataclass(frozen=True)
class KMeansModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int
    seed: int
    inertia_history: tuple[float, ...] = ()


def _kmeanspp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = _sq_dists(X, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx : idx + 1])[:, 0])
    return np.array(centers)


def _update(X, labels, centroids):
    """Cluster means; an empty cluster is reseeded at the point farthest from its centroid."""
    k = len(centroids)
    new = centroids.copy()
    counts = np.bincount(labels, minlength=k)
    for j in range(k):
        if counts[j]:
            new[j] = X[labels == j].mean(axis=0)
    for j in np.nonzero(counts == 0)[0]:
        own = _sq_dists(X, new)[np.arange(len(X)), labels]
        own[counts[labels] <= 1] = -1.0  # never strip a singleton cluster
        far = int(np.argmax(own))
        if own[far] <= 0:
            raise ConfigError(f"cannot fill empty cluster {j}: fewer distinct points than k={k}")
        new[j] = X[far]
        counts[labels[far]] -= 1
        labels = labels.copy()
        labels[far] = j
        counts[j] = 1
    return new


def _lloyd(X, centroids, max_iter):
    d2 = _sq_dists(X, centroids)
    labels = np.argmin(d2, axis=1)
    history = [float(d2[np.arange(len(X)), labels].sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        centroids = _update(X, labels, centroids)
        d2 = _sq_dists(X, centroids)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(X)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centroids, labels, history, n_iter


def kmeans_fit(x, k: int, seed: int = 0, n_init: int = 1, max_iter: int = MAX_ITER) -> KMeansModel:
    """k-means++ seeding followed by Lloyd iterations.

    Iterates until the assignment no longer changes or ``max_iter`` is hit.
    With ``n_init > 1`` the restarts draw from one generator seeded by
    ``seed`` and the lowest-inertia run is returned (first one on ties).
    """
    X = _values(x)
    n = len(X)
    if k < 1 or n_init < 1:
        raise ConfigError(f"need k >= 1 and n_init >= 1, got k={k}, n_init={n_init}")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of points ({n})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centroids, labels, history, n_iter = _lloyd(X, _kmeanspp(X, k, rng), max_iter)
        if np.bincount(labels, minlength=k).min() == 0:
            centroids = _update(X, labels, centroids)
            labels = np.argmin(_sq_dists(X, centroids), axis=1)
        inertia = float(_sq_dists(X, centroids)[np.arange(n), labels].sum())
        if best is None or inertia < best.inertia:
            best = KMeansModel(k, centroids, labels, inertia, n_iter, seed, tuple(history))
    return best


def total_inertia(x) -> float:
    """Inertia of the single-cluster solution."""
    X = _values(x)
    return float(np.sum((X - X.mean(axis=0)) ** 2))


# --------------------------------------------------------------------------
# validity indices


def _relabel(labels, n):
    labels = np.asarray(labels)
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} points")
    uniq, inv = np.unique(labels, return_inverse=True)
    return inv, len(uniq)


def pairwise_distances(X, chunk=64):
    n = len(X)
    out = np.empty((n, n))
    for start in range(0, n, chunk):
        block = X[start : start + chunk]
        diff = block[:, None, :] - X[None, :, :]
        out[start : start + chunk] = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    return out


def silhouette(x, labels) -> float:
    """Mean silhouette coefficient with euclidean distances.

    Points alone in their cluster score 0, as do points where both the
    intra- and nearest inter-cluster mean distances are 0.
    """
    X = _values(x)
    n = len(X)
    inv, k = _relabel(labels, n)
    if k < 2:
        raise UndefinedMetricError("silhouette needs at least two clusters")
    if k > n - 1:
        raise UndefinedMetricError(f"silhouette needs at most n-1={n - 1} clusters, got {k}")
    D = pairwise_distances(X)
    counts = np.bincount(inv, minlength=k)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), inv] = 1.0
    sums = D @ onehot  # (n, k) summed distance to every cluster
    own = counts[inv]
    a = np.where(own > 1, sums[np.arange(n), inv] / np.maximum(own - 1, 1), 0.0)
    means = sums / counts
    means[np.arange(n), inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def davies_bouldin(x, labels) -> float:
    """Davies-Bouldin index: mean over clusters of the worst (S_i + S_j) / M_ij."""
    X = _values(x)
    n = len(X)
    inv, k = _relabel(labels, n)
    if k < 2:
        raise UndefinedMetricError("Davies-Bouldin needs at least two clusters")
    centroids = np.array([X[inv == j].mean(axis=0) for j in range(k)])
    scatter = np.array([np.mean(np.linalg.norm(X[inv == j] - centroids[j], axis=1)) for j in range(k)])
    sep = pairwise_distances(centroids)
    worst = np.empty(k)
    for i in range(k):
        ratios = []
        for j in range(k):
            if i == j:
                continue
            if sep[i, j] == 0:
                raise UndefinedMetricError(f"clusters {i} and {j} have coincident centroids")
            ratios.append((scatter[i] + scatter[j]) / sep[i, j])
        worst[i] = max(ratios)
    return float(worst.mean())


def adjusted_rand_index(labels_true, labels_pred) -> float:
    """Chance-corrected Rand index between two labellings."""
    t, _ = _relabel(labels_true, len(labels_true))
    p, _ = _relabel(labels_pred, len(labels_true))
    n = len(t)
    table = np.zeros((t.max() + 1, p.max() + 1))
    np.add.at(table, (t, p), 1)

    def pairs(v):
        return float(np.sum(v * (v - 1) / 2))

    sum_cells = pairs(table)
    sum_rows = pairs(table.sum(axis=1))
    sum_cols = pairs(table.sum(axis=0))
    expected = sum_rows * sum_cols / (n * (n - 1) / 2) if n > 1 else 0.0
    max_index = (sum_rows + sum_cols) / 2
    if max_index == expected:
        return 1.0
    return (sum_cells - expected) / (max_index - expected)


# --------------------------------------------------------------------------
# elbow


def elbow_from_inertias(ks: Sequence[int], inertias: Sequence[float]) -> int:
    """k maximising ``J(k-1) - 2 J(k) + J(k+1)`` over interior k; ties pick the smaller k."""
    ks = list(ks)
    if len(ks) < 3 or len(ks) != len(inertias):
        raise ConfigError("elbow selection needs at least three (k, inertia) pairs")
    if any(b - a != 1 for a, b in zip(ks, ks[1:])):
        raise ConfigError(f"k range {ks} is not contiguous")
    best_k, best = None, -math.inf
    for idx in range(1, len(ks) - 1):
        second = inertias[idx - 1] - 2 * inertias[idx] + inertias[idx + 1]
        if second > best:
            best_k, best = ks[idx], second
    return best_k


def elbow_select(x, k_range=range(1, 8), seed: int = 0, n_init: int = 10):
    """Fit k-means over ``k_range`` and pick the elbow.

    Returns ``(k_star, inertias)``; k=1 uses the single-cluster inertia.
    """
    ks = list(k_range)
    inertias = []
    for k in ks:
        if k == 1:
            inertias.append(total_inertia(x))
        else:
            inertias.append(kmeans_fit(x, k, seed, n_init=n_init).inertia)
    return elbow_from_inertias(ks, inertias), inertias


# --------------------------------------------------------------------------
# evaluation grid


@dataclass(frozen=True)
class MetricCell:
    method: str
    k: int
    sc: float | None
    dbi: float | None
    reason: str = ""

    @property
    def missing(self):
        return self.sc is None or self.dbi is None


@dataclass
class MetricsReport:
    methods: list[str]
    ks: list[int]
    cells: list[MetricCell] = field(default_factory=list)

    def cell(self, method, k) -> MetricCell:
        for c in self.cells:
            if c.method == method and c.k == k:
                return c
        raise KeyError((method, k))

    def column(self, method):
        return [self.cell(method, k) for k in self.ks]

    def best(self, method):
        """``(k with max SC, k with min DBI)`` for a method, None where no cell is present."""
        cells = [c for c in self.column(method) if not c.missing]
        if not cells:
            return None, None
        best_sc = max(cells, key=lambda c: (c.sc, -c.k)).k
        best_dbi = min(cells, key=lambda c: (c.dbi, c.k)).k
        return best_sc, best_dbi

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        buf.write("method,k,SC,DBI,reason\n")
        for c in self.cells:
            sc = "" if c.sc is None else repr(c.sc)
            dbi = "" if c.dbi is None else repr(c.dbi)
            reason = c.reason.replace(",", ";").replace("\n", " ")
            buf.write(f"{c.method},{c.k},{sc},{dbi},{reason}\n")
        return buf.getvalue().encode()

    def to_dict(self):
        return {
            "methods": self.methods,
            "k": self.ks,
            "cells": [
                {"method": c.method, "k": c.k, "SC": c.sc, "DBI": c.dbi, "reason": c.reason or None}
                for c in self.cells
            ],
        }

    def to_json(self) -> bytes:
        return json.dumps(self.to_dict(), indent=1).encode()

    @classmethod
    def from_dict(cls, d):
        cells = [MetricCell(c["method"], c["k"], c["SC"], c["DBI"], c.get("reason") or "") for c in d["cells"]]
        return cls(list(d["methods"]), list(d["k"]), cells)


def evaluate_grid(
    feature_sets: Mapping[str, FeatureMatrix],
    k_range: Sequence[int] = DEFAULT_K_RANGE,
    seed: int = 0,
    n_init: int = 10,
) -> MetricsReport:
    """Silhouette and Davies-Bouldin for every (method, k).

    A failing cell is recorded with ``None`` values and the reason instead of
    aborting the grid.
    """
    methods = list(feature_sets)
    ref = None
    for name in methods:
        ids = feature_sets[name].customer_ids
        if ref is None:
            ref = ids
        elif ids != ref:
            raise ValueError(f"feature set {name!r} does not share the customer order")
    report = MetricsReport(methods, list(k_range))
    for name in methods:
        fm = feature_sets[name]
        for k in k_range:
            try:
                model = kmeans_fit(fm, k, seed, n_init=n_init)
                cell = MetricCell(name, k, silhouette(fm, model.assignments), davies_bouldin(fm, model.assignments))
            except (CustsegError, ValueError) as exc:
                log.warning("%s k=%d: %s", name, k, exc)
                cell = MetricCell(name, k, None, None, str(exc))
            report.cells.append(cell)
    return report
