"""Feature matrices, PCA and hybrid feature assembly."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateFeatureError

log = logging.getLogger(__name__)

SOURCES = ("lstm", "dtw", "rfm", "demographic", "hybrid")


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    customer_ids: tuple[str, ...]
    source: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got shape {values.shape}")
        if len(self.customer_ids) != values.shape[0]:
            raise ValueError(f"{values.shape[0]} rows but {len(self.customer_ids)} customer ids")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.source} features contain non-finite values")
        if self.source not in SOURCES:
            raise ValueError(f"unknown feature source {self.source!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "customer_ids", tuple(self.customer_ids))

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return self.values.shape[0]

    def with_values(self, values, source=None):
        return FeatureMatrix(values, self.customer_ids, source or self.source)

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        buf.write(f"# source={self.source}\n")
        width = self.values.shape[1]
        buf.write("customer_id," + ",".join(f"f{i}" for i in range(width)) + "\n")
        for cid, row in zip(self.customer_ids, self.values):
            buf.write(cid + "," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue().encode()

    @classmethod
    def from_csv(cls, data: bytes | str):
        if isinstance(data, bytes):
            data = data.decode()
        lines = data.splitlines()
        if not lines or not lines[0].startswith("# source="):
            raise ValueError("feature CSV must start with a '# source=' comment")
        source = lines[0][len("# source="):].strip()
        ids, rows = [], []
        for line in lines[2:]:
            if not line:
                continue
            cid, *vals = line.split(",")
            ids.append(cid)
            rows.append([float(v) for v in vals])
        width = len(lines[1].split(",")) - 1
        return cls(np.array(rows, dtype=float).reshape(len(rows), width), tuple(ids), source)


def _values(x):
    return x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=float)


def zscore_columns(values):
    """Standardise columns; constant columns become all-zero."""
    values = np.asarray(values, dtype=float)
    mu = values.mean(axis=0)
    sigma = values.std(axis=0)
    safe = np.where(sigma > 0, sigma, 1.0)
    out = (values - mu) / safe
    out[:, sigma == 0] = 0.0
    return out


# --------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (D, q), orthonormal columns
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[1]


def _fix_signs(vectors):
    # make the largest-magnitude entry of each column positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def components_for_variance(ratios, threshold):
    """Smallest q whose cumulative explained-variance ratio reaches ``threshold``."""
    cumulative = np.cumsum(ratios)
    hits = np.nonzero(cumulative >= threshold - 1e-12)[0]
    return int(hits[0]) + 1 if len(hits) else len(ratios)


def pca_fit(x, q: int | None = None, variance_threshold: float = 0.95) -> PcaModel:
    """Fit PCA by eigen-decomposition of the sample covariance.

    Parameters
    ----------
    x : FeatureMatrix or array, shape (N, D)
    q : int, optional
        Number of components, ``1 <= q <= min(N - 1, D)``.  When omitted the
        smallest q reaching ``variance_threshold`` cumulative explained
        variance is used.

    Components are returned in decreasing eigenvalue order, each with its
    largest-magnitude entry positive.
    """
    values = _values(x)
    n, d = values.shape
    if n < 2:
        raise ConfigError("PCA needs at least two rows")
    q_max = min(n - 1, d)
    if q is not None and not 1 <= q <= q_max:
        raise ConfigError(f"q={q} outside [1, {q_max}]")

    mean = values.mean(axis=0)
    centered = values - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(-eigvals, kind="stable")
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    total = eigvals.sum()
    if not total > 0:
        raise DegenerateFeatureError("covariance has rank 0 (every feature is constant)")
    ratios = eigvals / total

    if q is None:
        q = min(components_for_variance(ratios, variance_threshold), q_max)
    return PcaModel(mean, _fix_signs(eigvecs[:, :q]), eigvals[:q], ratios[:q])


def pca_transform(x, model: PcaModel):
    values = _values(x)
    if values.shape[1] != model.mean.shape[0]:
        raise ValueError(f"expected {model.mean.shape[0]} features, got {values.shape[1]}")
    projected = (values - model.mean) @ model.components
    if isinstance(x, FeatureMatrix):
        return x.with_values(projected)
    return projected


def pca_inverse(projected, model: PcaModel):
    return _values(projected) @ model.components.T + model.mean


# --------------------------------------------------------------------------
# hybrid assembly


@dataclass(frozen=True)
class HybridSpec:
    """How the LSTM, DTW and demographic blocks are combined.

    ``order="pre"`` reduces each block with its own PCA and concatenates the
    results; ``order="post"`` concatenates the standardised blocks (width
    m + n + d) and reduces once.  ``None`` dimensions pick the smallest q
    reaching ``variance_threshold``.
    """

    order: str = "pre"
    block_dims: tuple[int | None, int | None, int | None] = (None, None, None)
    q: int | None = None
    variance_threshold: float = 0.95

    def validate(self):
        if self.order not in ("pre", "post"):
            raise ConfigError(f"hybrid order must be 'pre' or 'post', got {self.order!r}")
        if len(self.block_dims) != 3:
            raise ConfigError("block_dims needs one entry per block (lstm, dtw, demographic)")
        if not 0 < self.variance_threshold <= 1:
            raise ConfigError("variance_threshold must be in (0, 1]")


def demographic_features(dataset) -> FeatureMatrix:
    """Raw (age, gender, latitude, longitude) per customer."""
    return FeatureMatrix(dataset.demographics(), tuple(dataset.customer_ids), "demographic")


def _check_alignment(blocks):
    ref = blocks[0]
    for block in blocks[1:]:
        if len(block) != len(ref):
            raise ValueError(f"{block.source} block has {len(block)} rows, {ref.source} has {len(ref)}")
        for a, b in zip(ref.customer_ids, block.customer_ids):
            if a != b:
                raise ValueError(f"row misalignment: {ref.source} has {a!r} where {block.source} has {b!r}")


def concatenate_blocks(*blocks: FeatureMatrix) -> FeatureMatrix:
    """Column-standardise each block and concatenate (width m + n + d)."""
    _check_alignment(blocks)
    stacked = np.hstack([zscore_columns(b.values) for b in blocks])
    return FeatureMatrix(stacked, blocks[0].customer_ids, "hybrid")


def _reduce(values, q, threshold):
    model = pca_fit(values, q, threshold)
    return pca_transform(values, model)


def assemble_hybrid(lstm_f, dtw_f, demo_f, spec: HybridSpec = HybridSpec()) -> FeatureMatrix:
    spec.validate()
    blocks = (lstm_f, dtw_f, demo_f)
    _check_alignment(blocks)
    if spec.order == "post":
        joined = concatenate_blocks(*blocks)
        log.debug("hybrid: concatenated width %d", joined.shape[1])
        return joined.with_values(_reduce(joined.values, spec.q, spec.variance_threshold))

    parts = []
    for block, q in zip(blocks, spec.block_dims):
        reduced = _reduce(zscore_columns(block.values), q, spec.variance_threshold)
        log.debug("hybrid: %s block %d -> %d columns", block.source, block.shape[1], reduced.shape[1])
        parts.append(reduced)
    return FeatureMatrix(np.hstack(parts), lstm_f.customer_ids, "hybrid")
