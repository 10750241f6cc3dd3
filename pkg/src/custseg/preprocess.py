"""Padding, z-score normalisation and teacher-forcing pairs.

Each customer becomes a ``max_len x 4`` matrix of (type, amount, balance,
timestamp) rows, zero-padded after the last real transaction.  The decoder
is trained with teacher forcing: its input starts with an SOS row of -1 and
its target ends the real data with an EOS row of -2.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFeatureError
from .ingest import Dataset

FEATURES = ("type", "amount", "balance", "timestamp")
N_FEATURES = len(FEATURES)
SOS = -1.0
EOS = -2.0


@dataclass(frozen=True)
class ZScoreParams:
    mu: np.ndarray
    sigma: np.ndarray

    def to_dict(self):
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mu"], dtype=float), np.asarray(d["sigma"], dtype=float))


@dataclass(frozen=True)
class PaddedSequenceBatch:
    tensor: np.ndarray  # (N, max_len, 4)
    lengths: np.ndarray  # (N,)
    customer_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.tensor.ndim != 3 or self.tensor.shape[2] != N_FEATURES:
            raise ValueError(f"tensor must be N x max_len x {N_FEATURES}, got {self.tensor.shape}")
        if len(self.lengths) != self.tensor.shape[0]:
            raise ValueError("lengths and tensor disagree on the customer count")

    def __len__(self):
        return self.tensor.shape[0]

    @property
    def max_len(self):
        return self.tensor.shape[1]

    @property
    def mask(self):
        """Boolean ``N x max_len`` array, True on real rows."""
        return np.arange(self.max_len)[None, :] < self.lengths[:, None]

    def real_rows(self):
        return self.tensor[self.mask]

    def customer_rows(self, i):
        return self.tensor[i, : self.lengths[i]]

    @classmethod
    def from_dataset(cls, dataset: Dataset, max_len: int | None = None):
        max_len = dataset.max_len if max_len is None else max_len
        tensor = np.zeros((len(dataset), max_len, N_FEATURES))
        lengths = np.zeros(len(dataset), dtype=int)
        for i, seq in enumerate(dataset.sequences):
            if seq.length > max_len:
                raise ValueError(f"customer {seq.customer_id} has {seq.length} rows > max_len={max_len}")
            tensor[i, : seq.length] = seq.matrix()
            lengths[i] = seq.length
        return cls(tensor, lengths, tuple(dataset.customer_ids))

    @classmethod
    def from_rows(cls, rows, max_len=None, customer_ids=()):
        """Build a batch from a list of ``length_i x 4`` arrays."""
        rows = [np.asarray(r, dtype=float).reshape(-1, N_FEATURES) for r in rows]
        lengths = np.array([len(r) for r in rows], dtype=int)
        max_len = int(lengths.max(initial=0)) if max_len is None else max_len
        tensor = np.zeros((len(rows), max_len, N_FEATURES))
        for i, r in enumerate(rows):
            tensor[i, : len(r)] = r
        return cls(tensor, lengths, tuple(customer_ids))

    def to_csv(self) -> bytes:
        """Debug dump: one line per padded row."""
        buf = io.StringIO()
        buf.write("customer,step,real," + ",".join(FEATURES) + "\n")
        mask = self.mask
        for i in range(len(self)):
            name = self.customer_ids[i] if self.customer_ids else str(i)
            for t in range(self.max_len):
                vals = ",".join(repr(float(v)) for v in self.tensor[i, t])
                buf.write(f"{name},{t},{int(mask[i, t])},{vals}\n")
        return buf.getvalue().encode()


def fit_zscore(batch: PaddedSequenceBatch) -> ZScoreParams:
    """Per-feature mean and population standard deviation over real rows."""
    rows = batch.real_rows()
    if len(rows) < 2:
        raise DegenerateFeatureError("need at least two real rows to fit z-score parameters")
    mu = rows.mean(axis=0)
    sigma = rows.std(axis=0)
    for name, s in zip(FEATURES, sigma):
        if not s > 0:
            raise DegenerateFeatureError(f"feature {name!r} is constant across all real rows")
    return ZScoreParams(mu, sigma)


def apply_zscore(batch: PaddedSequenceBatch, params: ZScoreParams) -> PaddedSequenceBatch:
    if params.mu.shape != (batch.tensor.shape[2],):
        raise ValueError(f"parameters have {params.mu.shape[0]} features, batch has {batch.tensor.shape[2]}")
    mask = batch.mask
    out = np.zeros_like(batch.tensor)
    out[mask] = (batch.tensor[mask] - params.mu) / params.sigma
    return PaddedSequenceBatch(out, batch.lengths.copy(), batch.customer_ids)


def invert_zscore(batch: PaddedSequenceBatch, params: ZScoreParams) -> PaddedSequenceBatch:
    mask = batch.mask
    out = np.zeros_like(batch.tensor)
    out[mask] = batch.tensor[mask] * params.sigma + params.mu
    return PaddedSequenceBatch(out, batch.lengths.copy(), batch.customer_ids)


@dataclass(frozen=True)
class TeacherForcingPair:
    decoder_input: np.ndarray  # (max_len + 1, 4)
    decoder_target: np.ndarray  # (max_len + 1, 4)
    length: int


def make_teacher_pairs(batch: PaddedSequenceBatch) -> list[TeacherForcingPair]:
    inputs, targets, _ = teacher_arrays(batch)
    return [TeacherForcingPair(inputs[i], targets[i], int(batch.lengths[i])) for i in range(len(batch))]


def teacher_arrays(batch: PaddedSequenceBatch):
    """Stacked decoder inputs, targets and loss mask.

    Returns arrays of shape ``(N, max_len + 1, 4)``, ``(N, max_len + 1, 4)``
    and ``(N, max_len + 1)``; the mask covers the real rows plus the EOS row.
    """
    n, t = len(batch), batch.max_len
    inputs = np.zeros((n, t + 1, N_FEATURES))
    targets = np.zeros((n, t + 1, N_FEATURES))
    inputs[:, 0] = SOS
    for i, length in enumerate(batch.lengths):
        inputs[i, 1 : length + 1] = batch.tensor[i, :length]
        targets[i, :length] = batch.tensor[i, :length]
        targets[i, length] = EOS
    mask = np.arange(t + 1)[None, :] <= batch.lengths[:, None]
    return inputs, targets, mask
