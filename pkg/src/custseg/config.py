"""Pipeline configuration: JSON schema, validation and seed derivation."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from .dtw import DtwConfig
from .errors import ConfigError
from .features import HybridSpec
from .ingest import DEFAULT_SEGMENTS, SegmentRegime, SynthConfig
from .seq2seq import TrainConfig

METHODS = ("lstm", "dtw", "rfm", "hybrid")


def derive_seed(seed: int, stage: str) -> int:
    """Per-stage seed: global seed plus the CRC-32 of the stage name, mod 2**32."""
    return (int(seed) + zlib.crc32(stage.encode())) % 2**32


def parse_k_range(value) -> tuple[int, ...]:
    """Accept ``"2..6"`` (inclusive), ``[2, 6]`` or an explicit list of k."""
    if isinstance(value, str):
        lo, sep, hi = value.partition("..")
        if not sep:
            raise ConfigError(f"k range {value!r} must look like 'lo..hi'")
        try:
            ks = tuple(range(int(lo), int(hi) + 1))
        except ValueError:
            raise ConfigError(f"k range {value!r} must look like 'lo..hi'") from None
    else:
        ks = tuple(int(k) for k in value)
        if len(ks) == 2 and ks[1] - ks[0] > 1:
            ks = tuple(range(ks[0], ks[1] + 1))
    if not ks:
        raise ConfigError("k range is empty")
    if any(b - a != 1 for a, b in zip(ks, ks[1:])):
        raise ConfigError(f"k range {ks} must be contiguous and increasing")
    return ks


def _strict(cls, data, section, **overrides):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)} - set(overrides)
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(sorted(unknown))}")
    try:
        return cls(**data, **overrides)
    except TypeError as exc:
        raise ConfigError(f"bad {section!r} section: {exc}") from None


@dataclass(frozen=True)
class DataPaths:
    transactions: str
    customers: str
    labels: str | None = None


@dataclass(frozen=True)
class SynthSection:
    n_customers: int = 300
    segments: tuple[SegmentRegime, ...] = DEFAULT_SEGMENTS
    start_timestamp: int = 1356998400
    min_transactions: int = 4
    max_transactions: int = 32

    def synth_config(self, seed):
        return SynthConfig(
            n_customers=self.n_customers,
            segments=self.segments,
            seed=seed,
            start_timestamp=self.start_timestamp,
            min_transactions=self.min_transactions,
            max_transactions=self.max_transactions,
        )


@dataclass(frozen=True)
class PreprocessSection:
    dump_padded: bool = False


@dataclass(frozen=True)
class DtwSection:
    mode: str = "amount"
    zscore: bool = True
    export_matrix: bool = False

    def dtw_config(self):
        return DtwConfig(self.mode, self.zscore)


@dataclass(frozen=True)
class RfmSection:
    credits_only: bool = False
    use_raw: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 7
    out: str = "out"
    methods: tuple[str, ...] = METHODS
    k_range: tuple[int, ...] = (2, 3, 4, 5, 6)
    elbow_range: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)
    assign_k: int | None = None
    n_init: int = 10
    data: DataPaths | None = None
    synth: SynthSection = field(default_factory=SynthSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    dtw: DtwSection = field(default_factory=DtwSection)
    rfm: RfmSection = field(default_factory=RfmSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    hybrid: HybridSpec = field(default_factory=HybridSpec)

    def stage_seed(self, stage):
        return derive_seed(self.seed, stage)

    def train_config(self):
        return dataclasses.replace(self.train, seed=self.stage_seed("train"))

    def synth_config(self):
        return self.synth.synth_config(self.stage_seed("synth"))

    @property
    def needs_training(self):
        return "lstm" in self.methods or "hybrid" in self.methods

    @property
    def needs_dtw(self):
        return "dtw" in self.methods or "hybrid" in self.methods

    def validate(self):
        """Checks that need no data."""
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods contain duplicates")
        if self.k_range[0] < 2:
            raise ConfigError("k range must start at 2 or above")
        if len(self.elbow_range) < 3 or self.elbow_range[0] < 1:
            raise ConfigError("elbow range needs at least three values of k >= 1")
        if self.assign_k is not None and self.assign_k < 2:
            raise ConfigError("assign_k must be >= 2")
        if self.n_init < 1:
            raise ConfigError("n_init must be >= 1")
        self.train.validate()
        self.hybrid.validate()
        self.dtw.dtw_config()
        if self.data is None:
            self.synth_config().validate()

    def validate_for_dataset(self, n_customers, max_len):
        """Checks that depend on the loaded data; run before any stage writes output."""
        if self.needs_training:
            self.train.validate(max_len)
        if self.k_range[-1] > n_customers - 1:
            raise ConfigError(f"k range {self.k_range[0]}..{self.k_range[-1]} exceeds n-1={n_customers - 1} customers")
        if self.elbow_range[-1] > n_customers:
            raise ConfigError(f"elbow range exceeds the {n_customers} customers")
        if self.assign_k is not None and self.assign_k > n_customers - 1:
            raise ConfigError(f"assign_k={self.assign_k} exceeds n-1={n_customers - 1}")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["train"].pop("seed")
        return d


def config_from_dict(raw: dict) -> PipelineConfig:
    """Build a :class:`PipelineConfig`, rejecting unknown keys at every level."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kw = {}
    for name in ("seed", "out", "assign_k", "n_init"):
        if name in raw:
            kw[name] = raw[name]
    if "methods" in raw:
        methods = raw["methods"]
        kw["methods"] = tuple(methods.split(",") if isinstance(methods, str) else methods)
    if "k_range" in raw:
        kw["k_range"] = parse_k_range(raw["k_range"])
    if "elbow_range" in raw:
        kw["elbow_range"] = parse_k_range(raw["elbow_range"])
    if raw.get("data") is not None:
        kw["data"] = _strict(DataPaths, raw["data"], "data")
    if "synth" in raw:
        synth = dict(raw["synth"] or {})
        if "segments" in synth:
            synth["segments"] = tuple(_strict(SegmentRegime, s, "synth.segments") for s in synth["segments"])
        kw["synth"] = _strict(SynthSection, synth, "synth")
    for name, cls in (("preprocess", PreprocessSection), ("dtw", DtwSection), ("rfm", RfmSection)):
        if name in raw:
            kw[name] = _strict(cls, raw[name], name)
    if "train" in raw:
        train = dict(raw["train"] or {})
        if "split" in train:
            train["split"] = tuple(train["split"])
        kw["train"] = _strict(TrainConfig, train, "train", seed=0)
    if "hybrid" in raw:
        hybrid = dict(raw["hybrid"] or {})
        if "block_dims" in hybrid:
            hybrid["block_dims"] = tuple(hybrid["block_dims"])
        kw["hybrid"] = _strict(HybridSpec, hybrid, "hybrid")
    try:
        cfg = PipelineConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        cfg = PipelineConfig()
        cfg.validate()
        return cfg
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)
