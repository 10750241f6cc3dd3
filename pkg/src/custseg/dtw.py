"""Dynamic time warping between customer transaction series.

The recursion is the unconstrained one: every cell stores the accumulated
cost and a back-pointer to the cheapest of its three predecessors.  When
predecessors tie, the diagonal ``(i-1, j-1)`` wins, then ``(i, j-1)``, then
``(i-1, j)``.

Series are 1-D arrays (amount-only mode, absolute difference) or ``S x 2``
arrays (amount-time mode, euclidean distance).
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import FeatureMatrix

log = logging.getLogger(__name__)

MODES = ("amount", "amount-time")


@dataclass(frozen=True)
class DtwConfig:
    mode: str = "amount"
    zscore: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown DTW mode {self.mode!r}; expected one of {MODES}")

    @property
    def delta(self):
        return "absolute" if self.mode == "amount" else "euclidean"


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    customer_ids: tuple[str, ...]

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        buf.write("customer_id," + ",".join(self.customer_ids) + "\n")
        for cid, row in zip(self.customer_ids, self.values):
            buf.write(cid + "," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue().encode()


def _as_series(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim not in (1, 2) or len(arr) == 0:
        raise ValueError(f"series {name} must be a non-empty 1-D or 2-D array")
    return arr


def _pointwise(a, b):
    """|a_i - b_j| for scalars, euclidean norm for vectors; shape (S, T)."""
    if a.ndim == 1:
        return np.abs(a[:, None] - b[None, :])
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def dtw_distance(a, b, cfg: DtwConfig | None = None):
    """Accumulated cost of the optimal warp between ``a`` and ``b``.

    Returns
    -------
    cost : float
    path : list of (i, j)
        1-based index pairs from ``(1, 1)`` to ``(S, T)``.
    """
    a = _as_series(a, "a")
    b = _as_series(b, "b")
    if a.ndim != b.ndim or (a.ndim == 2 and a.shape[1] != b.shape[1]):
        raise ValueError(f"series dimensions differ: {a.shape} vs {b.shape}")
    if cfg is not None and (a.ndim == 1) != (cfg.mode == "amount"):
        raise ValueError(f"{cfg.mode} mode expects {'1-D' if cfg.mode == 'amount' else '2-D'} series")

    delta = _pointwise(a, b).tolist()
    S, T = len(a), len(b)
    cost = [[0.0] * T for _ in range(S)]
    back = [[(-1, -1)] * T for _ in range(S)]
    cost[0][0] = delta[0][0]
    for i in range(1, S):
        cost[i][0] = cost[i - 1][0] + delta[i][0]
        back[i][0] = (i - 1, 0)
    for j in range(1, T):
        cost[0][j] = cost[0][j - 1] + delta[0][j]
        back[0][j] = (0, j - 1)
    for i in range(1, S):
        prev, cur, drow = cost[i - 1], cost[i], delta[i]
        for j in range(1, T):
            best, ptr = prev[j - 1], (i - 1, j - 1)
            if cur[j - 1] < best:
                best, ptr = cur[j - 1], (i, j - 1)
            if prev[j] < best:
                best, ptr = prev[j], (i - 1, j)
            cur[j] = best + drow[j]
            back[i][j] = ptr

    path = []
    i, j = S - 1, T - 1
    while i >= 0:
        path.append((i + 1, j + 1))
        i, j = back[i][j]
    path.reverse()
    return cost[S - 1][T - 1], path


def _dtw_one_to_many(a, others, lengths):
    """DTW cost from ``a`` to each padded series in ``others``.

    The DP over a padded ``b`` agrees with the DP over its true prefix in
    every cell that only depends on that prefix, so the answer for series k
    is read at column ``lengths[k] - 1`` of the last row.  Cell updates use
    the same floating-point operations as :func:`dtw_distance`.
    """
    delta = _pointwise_batch(a, others)  # (M, S, T)
    S = delta.shape[1]
    T = delta.shape[2]
    row = np.cumsum(delta[:, 0, :], axis=1)
    for i in range(1, S):
        cur = np.empty_like(row)
        cur[:, 0] = row[:, 0] + delta[:, i, 0]
        d = delta[:, i]
        for j in range(1, T):
            cur[:, j] = np.minimum(np.minimum(row[:, j - 1], cur[:, j - 1]), row[:, j]) + d[:, j]
        row = cur
    return row[np.arange(len(others)), lengths - 1]


def _pointwise_batch(a, others):
    if a.ndim == 1:
        return np.abs(a[None, :, None] - others[:, None, :])
    diff = a[None, :, None, :] - others[:, None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def dtw_matrix(sequences, cfg: DtwConfig | None = None, customer_ids=None) -> DistanceMatrix:
    """Symmetric matrix of pairwise DTW costs.

    Only the upper triangle is computed; it is mirrored, and the diagonal
    is exactly zero.
    """
    seqs = [_as_series(s, str(k)) for k, s in enumerate(sequences)]
    n = len(seqs)
    if n < 2:
        raise ValueError("dtw_matrix needs at least two sequences")
    ndim = seqs[0].ndim
    if any(s.ndim != ndim for s in seqs):
        raise ValueError("all series must share the same dimensionality")
    if cfg is not None and (ndim == 1) != (cfg.mode == "amount"):
        raise ValueError(f"{cfg.mode} mode expects {'1-D' if cfg.mode == 'amount' else '2-D'} series")

    lengths = np.array([len(s) for s in seqs])
    t_max = lengths.max()
    padded = np.zeros((n, t_max) + seqs[0].shape[1:])
    for k, s in enumerate(seqs):
        padded[k, : len(s)] = s

    values = np.zeros((n, n))
    for i in range(n - 1):
        try:
            costs = _dtw_one_to_many(seqs[i], padded[i + 1 :], lengths[i + 1 :])
        except Exception as exc:  # pragma: no cover - defensive
            raise ValueError(f"DTW failed for rows starting at pair ({i}, {i + 1}): {exc}") from exc
        values[i, i + 1 :] = costs
        values[i + 1 :, i] = costs
    ids = tuple(customer_ids) if customer_ids is not None else tuple(str(k) for k in range(n))
    return DistanceMatrix(values, ids)


def dataset_series(dataset, cfg: DtwConfig = DtwConfig()):
    """Per-customer DTW series from a dataset.

    Amounts (and timestamps in amount-time mode) are standardised with the
    mean and population standard deviation over all transactions when
    ``cfg.zscore`` is set.
    """
    amounts = [s.amounts() for s in dataset.sequences]
    stamps = [s.timestamps() for s in dataset.sequences]
    if cfg.zscore:
        amounts = _standardise(amounts)
        stamps = _standardise(stamps)
    if cfg.mode == "amount":
        return amounts
    return [np.column_stack([a, t]) for a, t in zip(amounts, stamps)]


def _standardise(parts):
    flat = np.concatenate(parts)
    mu, sigma = flat.mean(), flat.std()
    if not sigma > 0:
        sigma = 1.0
    return [(p - mu) / sigma for p in parts]


def dtw_features(matrix: DistanceMatrix) -> FeatureMatrix:
    """Row i of the distance matrix is the feature vector of customer i."""
    return FeatureMatrix(matrix.values.copy(), matrix.customer_ids, "dtw")
