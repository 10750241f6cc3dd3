"""Recency / frequency / monetary summaries and quintile scores."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import FeatureMatrix
from .ingest import CREDIT, Dataset


@dataclass(frozen=True)
class RfmRaw:
    customer_id: str
    recency: float
    frequency: int
    monetary: float


@dataclass(frozen=True)
class RfmScore:
    customer_id: str
    r: int
    f: int
    m: int


def compute_rfm_raw(dataset: Dataset, credits_only: bool = False) -> list[RfmRaw]:
    """Raw RFM values; recency is measured from the dataset's latest timestamp.

    ``credits_only`` restricts the monetary sum to credit transactions.
    """
    reference = max(r.timestamp for s in dataset.sequences for r in s.records)
    out = []
    for seq in dataset.sequences:
        last = max(r.timestamp for r in seq.records)
        monetary = sum(r.amount for r in seq.records if not credits_only or r.tx_type == CREDIT)
        out.append(RfmRaw(seq.customer_id, float(reference - last), seq.length, float(monetary)))
    return out


def quintile_scores(values, descending=False):
    """Ordinal 1-5 scores.

    A value's score depends on how many values rank strictly below it, so
    ties share the lowest score of their group.  With five or more values
    the scores are quintiles; with fewer, ranks are spread evenly over 1-5.
    """
    v = np.asarray(values, dtype=float)
    if descending:
        v = -v
    n = len(v)
    below = np.searchsorted(np.sort(v), v, side="left")
    if n >= 5:
        return 1 + (5 * below) // n
    if n == 1:
        return np.ones(1, dtype=int)
    return 1 + (4 * below) // (n - 1)


def score_rfm(raws: Sequence[RfmRaw]) -> list[RfmScore]:
    """Score recency descending (most recent gets 5), frequency and monetary ascending."""
    if not raws:
        return []
    r = quintile_scores([x.recency for x in raws], descending=True)
    f = quintile_scores([x.frequency for x in raws])
    m = quintile_scores([x.monetary for x in raws])
    return [RfmScore(x.customer_id, int(a), int(b), int(c)) for x, a, b, c in zip(raws, r, f, m)]


def rfm_features(items: Sequence[RfmScore] | Sequence[RfmRaw]) -> FeatureMatrix:
    """``N x 3`` matrix of (r, f, m), z-scored across customers.

    Accepts scores, or raw values for the raw-mode variant.  A constant
    column is passed through unchanged with a warning.
    """
    if items and isinstance(items[0], RfmRaw):
        values = np.array([(x.recency, x.frequency, x.monetary) for x in items], dtype=float)
    else:
        values = np.array([(x.r, x.f, x.m) for x in items], dtype=float)
    values = values.reshape(-1, 3)
    mu = values.mean(axis=0)
    sigma = values.std(axis=0)
    out = values.copy()
    for col in range(3):
        if sigma[col] > 0:
            out[:, col] = (values[:, col] - mu[col]) / sigma[col]
        else:
            warnings.warn(f"RFM column {'rfm'[col]} is constant; passed through unscaled", stacklevel=2)
    return FeatureMatrix(out, tuple(x.customer_id for x in items), "rfm")


def rfm_to_csv(raws: Sequence[RfmRaw], scores: Sequence[RfmScore]) -> bytes:
    buf = io.StringIO()
    buf.write("customer_id,recency,frequency,monetary,r,f,m\n")
    for raw, score in zip(raws, scores):
        buf.write(
            f"{raw.customer_id},{raw.recency!r},{raw.frequency},{raw.monetary!r},{score.r},{score.f},{score.m}\n"
        )
    return buf.getvalue().encode()
