"""Transaction and customer tables: parsing, grouping and synthetic generation.

The CSV layout used throughout the package::

    transactions.csv  Trans_ID,Account_ID,Type,Amount,Balance,Timestamp
    customers.csv     Customer_ID,Account_ID,Gender,Age,Latitude,Longitude

Column names are case-sensitive, order is free.  Transaction type is encoded
numerically as ``Credit -> 1`` and ``Debit -> 0``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, OrphanTransactionError, RowError, SchemaError

log = logging.getLogger(__name__)

CREDIT = 1
DEBIT = 0
TYPE_CODES = {"Credit": CREDIT, "Debit": DEBIT}
TYPE_NAMES = {v: k for k, v in TYPE_CODES.items()}

TRANSACTION_COLUMNS = ("Trans_ID", "Account_ID", "Type", "Amount", "Balance", "Timestamp")
CUSTOMER_COLUMNS = ("Customer_ID", "Account_ID", "Gender", "Age", "Latitude", "Longitude")


@dataclass(frozen=True)
class TransactionRecord:
    trans_id: str
    account_id: str
    tx_type: int
    amount: float
    balance: float
    timestamp: int

    def features(self):
        """The four per-transaction features (type, amount, balance, timestamp)."""
        return (float(self.tx_type), self.amount, self.balance, float(self.timestamp))


@dataclass(frozen=True)
class CustomerProfile:
    customer_id: str
    account_id: str
    gender: float
    age: int
    latitude: float
    longitude: float

    def demographics(self):
        return (float(self.age), self.gender, self.latitude, self.longitude)


@dataclass(frozen=True)
class CustomerSequence:
    customer_id: str
    records: tuple[TransactionRecord, ...]

    @property
    def length(self):
        return len(self.records)

    def matrix(self):
        """Real (unpadded) rows as a ``length x 4`` float array."""
        return np.array([r.features() for r in self.records], dtype=float).reshape(-1, 4)

    def amounts(self):
        return np.array([r.amount for r in self.records], dtype=float)

    def timestamps(self):
        return np.array([r.timestamp for r in self.records], dtype=float)


@dataclass(frozen=True)
class Dataset:
    customers: tuple[CustomerProfile, ...]
    sequences: tuple[CustomerSequence, ...]
    dropped_customers: int = 0

    @property
    def max_len(self):
        return max((s.length for s in self.sequences), default=0)

    @property
    def customer_ids(self):
        return [c.customer_id for c in self.customers]

    def __len__(self):
        return len(self.customers)

    def demographics(self):
        """``N x 4`` array of (age, gender, latitude, longitude)."""
        return np.array([c.demographics() for c in self.customers], dtype=float).reshape(-1, 4)

    def transactions(self):
        return [r for s in self.sequences for r in s.records]


# --------------------------------------------------------------------------
# CSV parsing


def _reader(data, required, table):
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    reader = csv.DictReader(io.StringIO(data))
    header = reader.fieldnames or []
    for col in required:
        if col not in header:
            raise SchemaError(col, table)
    return reader


def _float(row_index, name, raw):
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise RowError(row_index, f"{name}={raw!r} is not a number") from None
    if not math.isfinite(value):
        raise RowError(row_index, f"{name}={raw!r} is not finite")
    return value


def _int(row_index, name, raw):
    value = _float(row_index, name, raw)
    if not value.is_integer():
        raise RowError(row_index, f"{name}={raw!r} is not an integer")
    return int(value)


def parse_transactions(data: bytes | str) -> list[TransactionRecord]:
    """Parse a transactions table.

    Row indices in error messages count data rows from 0 (the header is not
    counted).
    """
    records = []
    for idx, row in enumerate(_reader(data, TRANSACTION_COLUMNS, "transactions")):
        token = (row["Type"] or "").strip()
        if token not in TYPE_CODES:
            raise RowError(idx, f"unknown transaction type {token!r}")
        amount = _float(idx, "Amount", row["Amount"])
        if amount < 0:
            raise RowError(idx, f"Amount={amount} is negative")
        timestamp = _int(idx, "Timestamp", row["Timestamp"])
        if timestamp < 0:
            raise RowError(idx, f"Timestamp={timestamp} is negative")
        records.append(
            TransactionRecord(
                trans_id=row["Trans_ID"],
                account_id=row["Account_ID"],
                tx_type=TYPE_CODES[token],
                amount=amount,
                balance=_float(idx, "Balance", row["Balance"]),
                timestamp=timestamp,
            )
        )
    return records


def parse_customers(data: bytes | str) -> list[CustomerProfile]:
    """Parse a customer table, enforcing gender/age/coordinate ranges."""
    profiles = []
    for idx, row in enumerate(_reader(data, CUSTOMER_COLUMNS, "customers")):
        gender = _float(idx, "Gender", row["Gender"])
        if gender not in (0.0, 1.0):
            raise RowError(idx, f"Gender={gender} must be 0 or 1")
        age = _int(idx, "Age", row["Age"])
        if not 1 <= age <= 130:
            raise RowError(idx, f"Age={age} outside [1, 130]")
        lat = _float(idx, "Latitude", row["Latitude"])
        if not -90 <= lat <= 90:
            raise RowError(idx, f"Latitude={lat} outside [-90, 90]")
        lon = _float(idx, "Longitude", row["Longitude"])
        if not -180 <= lon <= 180:
            raise RowError(idx, f"Longitude={lon} outside [-180, 180]")
        profiles.append(
            CustomerProfile(row["Customer_ID"], row["Account_ID"], gender, age, lat, lon)
        )
    return profiles


def _write(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def transactions_to_csv(records: Iterable[TransactionRecord]) -> bytes:
    return _write(
        TRANSACTION_COLUMNS,
        (
            (r.trans_id, r.account_id, TYPE_NAMES[r.tx_type], repr(r.amount), repr(r.balance), r.timestamp)
            for r in records
        ),
    )


def customers_to_csv(profiles: Iterable[CustomerProfile]) -> bytes:
    return _write(
        CUSTOMER_COLUMNS,
        (
            (p.customer_id, p.account_id, repr(p.gender), p.age, repr(p.latitude), repr(p.longitude))
            for p in profiles
        ),
    )


def labels_to_csv(customer_ids: Sequence[str], labels: Sequence[int]) -> bytes:
    return _write(("customer_id", "segment"), zip(customer_ids, (int(x) for x in labels)))


def parse_labels(data: bytes | str) -> dict[str, int]:
    reader = _reader(data, ("customer_id", "segment"), "labels")
    return {row["customer_id"]: _int(i, "segment", row["segment"]) for i, row in enumerate(reader)}


# --------------------------------------------------------------------------
# grouping


def build_dataset(
    transactions: Sequence[TransactionRecord], customers: Sequence[CustomerProfile]
) -> Dataset:
    """Group transactions into chronological per-customer sequences.

    Sorting is stable, so transactions sharing a timestamp keep their input
    order.  Customers without any transaction are dropped; the count is kept
    in ``Dataset.dropped_customers`` and reported as a warning.
    """
    by_account = {}
    for profile in customers:
        if profile.account_id in by_account:
            raise ConfigError(f"account {profile.account_id!r} belongs to more than one customer")
        by_account[profile.account_id] = profile

    grouped = {p.account_id: [] for p in customers}
    orphans = []
    for record in transactions:
        bucket = grouped.get(record.account_id)
        if bucket is None:
            orphans.append(record.account_id)
        else:
            bucket.append(record)
    if orphans:
        raise OrphanTransactionError(orphans)

    kept_profiles, sequences = [], []
    for profile in customers:
        records = grouped[profile.account_id]
        if not records:
            continue
        records = sorted(records, key=lambda r: r.timestamp)
        kept_profiles.append(profile)
        sequences.append(CustomerSequence(profile.customer_id, tuple(records)))

    dropped = len(customers) - len(kept_profiles)
    if dropped:
        warnings.warn(f"{dropped} customer(s) without transactions were dropped", stacklevel=2)
    return Dataset(tuple(kept_profiles), tuple(sequences), dropped)


def subset(dataset: Dataset, indices: Sequence[int]) -> Dataset:
    """Dataset restricted to the customers at ``indices`` (in that order)."""
    return Dataset(
        tuple(dataset.customers[i] for i in indices),
        tuple(dataset.sequences[i] for i in indices),
    )


# --------------------------------------------------------------------------
# synthetic data

# (latitude, longitude) of a few US cities used as home locations.
_CITIES = (
    (35.08449, -106.65114),
    (40.71427, -74.00597),
    (39.76838, -86.15804),
    (41.85003, -87.65005),
    (34.05223, -118.24368),
    (29.76328, -95.36327),
    (47.60621, -122.33207),
    (33.44838, -112.07404),
)


@dataclass(frozen=True)
class SegmentRegime:
    """Behavioural regime of one planted customer segment.

    Amounts are log-normal around ``mean_amount``; when ``alt_amount`` is
    set, each transaction is centred on it instead with probability
    ``alt_share``.  Transaction counts are Poisson around ``mean_count`` and
    gaps between transactions exponential with mean ``interval_days``.
    """

    name: str
    mean_amount: float
    amount_spread: float = 0.25
    mean_count: float = 15.0
    interval_days: float = 7.0
    credit_share: float = 0.4
    age_mean: float = 40.0
    age_sd: float = 5.0
    alt_amount: float | None = None
    alt_share: float = 0.0


DEFAULT_SEGMENTS = (
    SegmentRegime("low-spender", mean_amount=100.0, mean_count=12, interval_days=8.0, age_mean=28),
    SegmentRegime("high-spender", mean_amount=1000.0, mean_count=12, interval_days=8.0, age_mean=60),
    SegmentRegime(
        "mixed", mean_amount=100.0, alt_amount=1000.0, alt_share=0.5, mean_count=24, interval_days=4.0, age_mean=44
    ),
)


@dataclass(frozen=True)
class SynthConfig:
    n_customers: int = 300
    segments: tuple[SegmentRegime, ...] = field(default=DEFAULT_SEGMENTS)
    seed: int = 7
    start_timestamp: int = 1356998400
    min_transactions: int = 4
    max_transactions: int = 32

    def validate(self):
        n_seg = len(self.segments)
        if n_seg < 1:
            raise ConfigError("synthetic config needs at least one segment")
        if self.n_customers < n_seg:
            raise ConfigError(f"n_customers={self.n_customers} is smaller than the segment count {n_seg}")
        if not 1 <= self.min_transactions <= self.max_transactions:
            raise ConfigError("need 1 <= min_transactions <= max_transactions")
        for seg in self.segments:
            bad = (
                seg.mean_amount <= 0
                or seg.interval_days <= 0
                or not 0 <= seg.credit_share <= 1
                or not 0 <= seg.alt_share <= 1
                or (seg.alt_amount is not None and seg.alt_amount <= 0)
            )
            if bad:
                raise ConfigError(f"segment {seg.name!r} has an invalid regime")


def generate_synthetic(config: SynthConfig = SynthConfig()) -> tuple[Dataset, np.ndarray]:
    """Generate a bank-transaction dataset with planted behavioural segments.

    Returns the dataset and an integer array of ground-truth segment labels
    aligned with ``dataset.customers``.  Labels are for evaluation only.
    Every account starts at a zero balance and the first transaction is a
    credit; after that ``balance_k = balance_{k-1} +/- amount_k``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, n_seg = config.n_customers, len(config.segments)
    labels = rng.permutation(np.arange(n) % n_seg)

    customers, transactions = [], []
    tx_counter = 0
    for i in range(n):
        seg = config.segments[labels[i]]
        account_id = f"A{i + 1:08d}"
        city = _CITIES[rng.integers(len(_CITIES))]
        age = int(np.clip(round(rng.normal(seg.age_mean, seg.age_sd)), 18, 100))
        customers.append(
            CustomerProfile(
                customer_id=f"C{i + 1:08d}",
                account_id=account_id,
                gender=float(rng.integers(2)),
                age=age,
                latitude=round(city[0] + rng.normal(0, 0.05), 5),
                longitude=round(city[1] + rng.normal(0, 0.05), 5),
            )
        )

        count = int(np.clip(rng.poisson(seg.mean_count), config.min_transactions, config.max_transactions))
        centre = np.full(count, seg.mean_amount)
        if seg.alt_amount is not None:
            centre[rng.random(count) < seg.alt_share] = seg.alt_amount
        amounts = np.round(rng.lognormal(np.log(centre), seg.amount_spread), 2)
        credits = rng.random(count) < seg.credit_share
        credits[0] = True
        gaps = rng.exponential(seg.interval_days * 86400.0, count)
        gaps[0] = rng.uniform(0, seg.interval_days * 86400.0)
        stamps = config.start_timestamp + np.floor(np.cumsum(gaps)).astype(np.int64)

        balance = 0.0
        for amount, credit, ts in zip(amounts.tolist(), credits.tolist(), stamps.tolist()):
            balance = balance + amount if credit else balance - amount
            tx_counter += 1
            transactions.append(
                TransactionRecord(
                    trans_id=f"T{tx_counter:08d}",
                    account_id=account_id,
                    tx_type=CREDIT if credit else DEBIT,
                    amount=amount,
                    balance=balance,
                    timestamp=int(ts),
                )
            )

    dataset = build_dataset(transactions, customers)
    return dataset, labels.astype(int)
