"""Stage orchestration, run manifest and the comparison report.

Every stage reads its inputs from memory when run inside
:func:`run_pipeline`, or from the files earlier stages left in the output
directory when run on its own.  Per-stage seeds come from
:func:`custseg.config.derive_seed`.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import MetricsReport, adjusted_rand_index, elbow_select, evaluate_grid, kmeans_fit
from .config import METHODS, PipelineConfig
from .dtw import dataset_series, dtw_features, dtw_matrix
from .errors import ConfigError, CustsegError, StageError
from .features import FeatureMatrix, assemble_hybrid, demographic_features, pca_fit, pca_transform
from .ingest import (
    Dataset,
    build_dataset,
    customers_to_csv,
    generate_synthetic,
    labels_to_csv,
    parse_customers,
    parse_labels,
    parse_transactions,
    transactions_to_csv,
)
from .preprocess import PaddedSequenceBatch, apply_zscore, fit_zscore
from .rfm import compute_rfm_raw, rfm_features, rfm_to_csv, score_rfm
from .seq2seq import extract_features, load_checkpoint, loss_to_csv, save_checkpoint, train

log = logging.getLogger(__name__)

METHOD_TITLES = {
    "lstm": "Encoder-Decoder LSTM",
    "dtw": "Dynamic Time Warping",
    "rfm": "RFM Score",
    "hybrid": "Hybrid Approach",
}
MISSING = "—"
PLOT_K = 3


# --------------------------------------------------------------------------
# output directory


class Workspace:
    """Output directory wrapper; every write goes through here."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, name):
        return self.root / name

    def exists(self, name):
        return self.path(name).is_file()

    def write(self, name, data: bytes):
        self.root.mkdir(parents=True, exist_ok=True)
        self.path(name).write_bytes(data)
        return self.path(name)

    def read(self, name) -> bytes:
        if not self.exists(name):
            raise ConfigError(f"{self.path(name)} not found; run the stage that produces it first")
        return self.path(name).read_bytes()

    def files(self):
        if not self.root.is_dir():
            return []
        return sorted(p.relative_to(self.root).as_posix() for p in self.root.rglob("*") if p.is_file())


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# --------------------------------------------------------------------------
# manifest


@dataclass
class StageRecord:
    name: str
    seconds: float
    status: str = "OK"
    error: str | None = None


@dataclass
class RunManifest:
    config: dict
    seed: int
    version: str = __version__
    status: str = "RUNNING"
    failed_stage: str | None = None
    stages: list[StageRecord] = field(default_factory=list)
    files: list[dict] = field(default_factory=list)

    def to_json(self) -> bytes:
        return json.dumps(asdict(self), indent=1, sort_keys=True).encode()

    def finalise(self, ws: Workspace):
        """List every file in the output directory with its checksum, then write the manifest."""
        self.files = []
        for name in ws.files():
            if name == "manifest.json":
                continue
            data = ws.path(name).read_bytes()
            self.files.append({"path": name, "sha256": sha256(data), "bytes": len(data)})
        ws.write("manifest.json", self.to_json())
        return self


# --------------------------------------------------------------------------
# data loading


def load_dataset(cfg: PipelineConfig, ws: Workspace | None = None, prefer_workspace=False):
    """Dataset and planted labels (or None) from data paths, the workspace or the generator."""
    if cfg.data is not None:
        tx = parse_transactions(Path(cfg.data.transactions).read_bytes())
        cu = parse_customers(Path(cfg.data.customers).read_bytes())
        labels_path = cfg.data.labels
        dataset = build_dataset(tx, cu)
        labels = _labels_for(dataset, Path(labels_path).read_bytes()) if labels_path else None
        return dataset, labels
    if prefer_workspace and ws is not None and ws.exists("transactions.csv") and ws.exists("customers.csv"):
        dataset = build_dataset(parse_transactions(ws.read("transactions.csv")), parse_customers(ws.read("customers.csv")))
        labels = _labels_for(dataset, ws.read("labels.csv")) if ws.exists("labels.csv") else None
        return dataset, labels
    return generate_synthetic(cfg.synth_config())


def _labels_for(dataset: Dataset, data: bytes):
    table = parse_labels(data)
    missing = [c for c in dataset.customer_ids if c not in table]
    if missing:
        raise ConfigError(f"labels missing for customer {missing[0]!r}")
    return np.array([table[c] for c in dataset.customer_ids], dtype=int)


def prepare(cfg: PipelineConfig, ws: Workspace | None = None, prefer_workspace=False):
    """Load data and run every validation check; nothing is written."""
    cfg.validate()
    dataset, labels = load_dataset(cfg, ws, prefer_workspace)
    if len(dataset) == 0:
        raise ConfigError("dataset has no customers with transactions")
    cfg.validate_for_dataset(len(dataset), dataset.max_len)
    return dataset, labels


# --------------------------------------------------------------------------
# stages


def stage_ingest(cfg, ws, dataset, labels):
    ws.write("transactions.csv", transactions_to_csv(dataset.transactions()))
    ws.write("customers.csv", customers_to_csv(dataset.customers))
    if labels is not None:
        ws.write("labels.csv", labels_to_csv(dataset.customer_ids, labels))
    summary = {
        "customers": len(dataset),
        "transactions": sum(s.length for s in dataset.sequences),
        "max_len": dataset.max_len,
        "dropped_customers": dataset.dropped_customers,
    }
    ws.write("dataset.json", json.dumps(summary, indent=1).encode())


def stage_train(cfg, ws, dataset):
    batch = PaddedSequenceBatch.from_dataset(dataset)
    if cfg.preprocess.dump_padded:
        ws.write("padded.csv", batch.to_csv())
    zscore = fit_zscore(batch)
    result = train(apply_zscore(batch, zscore), cfg.train_config())
    ws.write("model.json", save_checkpoint(result.params, result.config, zscore))
    ws.write("loss.csv", loss_to_csv(result.history))
    return result.params, result.config, zscore


def lstm_from_model(ws, dataset, model=None):
    params, tcfg, zscore = model if model is not None else load_checkpoint(ws.read("model.json"))
    batch = apply_zscore(PaddedSequenceBatch.from_dataset(dataset), zscore)
    return extract_features(batch, params, tcfg)


def dtw_from_dataset(cfg, ws, dataset):
    matrix = dtw_matrix(dataset_series(dataset, cfg.dtw.dtw_config()), customer_ids=dataset.customer_ids)
    if cfg.dtw.export_matrix:
        ws.write("dtw_matrix.csv", matrix.to_csv())
    return dtw_features(matrix)


def rfm_from_dataset(cfg, ws, dataset):
    raws = compute_rfm_raw(dataset, credits_only=cfg.rfm.credits_only)
    scores = score_rfm(raws)
    ws.write("rfm.csv", rfm_to_csv(raws, scores))
    return rfm_features(raws if cfg.rfm.use_raw else scores)


def stage_features(cfg, ws, dataset, methods, model=None):
    """Feature matrices for ``methods``; intermediates needed by the hybrid are built but not written."""
    cache = {}

    def get(method):
        if method not in cache:
            if method == "lstm":
                cache[method] = lstm_from_model(ws, dataset, model)
            elif method == "dtw":
                cache[method] = dtw_from_dataset(cfg, ws, dataset)
            elif method == "rfm":
                cache[method] = rfm_from_dataset(cfg, ws, dataset)
            else:
                cache[method] = assemble_hybrid(get("lstm"), get("dtw"), demographic_features(dataset), cfg.hybrid)
        return cache[method]

    out = {}
    for method in methods:
        out[method] = get(method)
        ws.write(f"features_{method}.csv", out[method].to_csv())
    return out


def read_features(ws, methods):
    return {m: FeatureMatrix.from_csv(ws.read(f"features_{m}.csv")) for m in methods}


def stage_cluster(cfg, ws, feature_sets):
    """Pick k per method (elbow unless ``assign_k`` is set) and write the assignments."""
    seed = cfg.stage_seed("cluster")
    assignments, elbow_rows = {}, []
    for method, fm in feature_sets.items():
        k_sel, inertias = elbow_select(fm, cfg.elbow_range, seed, n_init=cfg.n_init)
        elbow_rows += [(method, k, j) for k, j in zip(cfg.elbow_range, inertias)]
        k = cfg.assign_k if cfg.assign_k is not None else max(k_sel, 2)
        assignments[method] = kmeans_fit(fm, k, seed, n_init=cfg.n_init)
    buf = io.StringIO()
    buf.write("method,k,inertia\n")
    for method, k, j in elbow_rows:
        buf.write(f"{method},{k},{j!r}\n")
    ws.write("elbow.csv", buf.getvalue().encode())
    buf = io.StringIO()
    buf.write("customer_id,method,k,cluster\n")
    for method, model in assignments.items():
        for cid, c in zip(feature_sets[method].customer_ids, model.assignments):
            buf.write(f"{cid},{method},{model.k},{int(c)}\n")
    ws.write("assignments.csv", buf.getvalue().encode())
    return assignments


def read_assignments(ws):
    out = {}
    lines = ws.read("assignments.csv").decode().splitlines()[1:]
    for line in lines:
        cid, method, k, c = line.split(",")
        out.setdefault(method, []).append(int(c))
    return {m: np.array(v) for m, v in out.items()}


def stage_evaluate(cfg, ws, feature_sets, labels=None, manifest=None):
    seed = cfg.stage_seed("evaluate")
    report = evaluate_grid(feature_sets, cfg.k_range, seed, n_init=cfg.n_init)
    ws.write("metrics.csv", report.to_csv())
    ws.write("metrics.json", report.to_json())
    recovery = None
    if labels is not None:
        g = len(np.unique(labels))
        recovery = []
        for method, fm in feature_sets.items():
            if 2 <= g <= len(fm) - 1:
                model = kmeans_fit(fm, g, seed, n_init=cfg.n_init)
                recovery.append({"method": method, "k": g, "ari": adjusted_rand_index(labels, model.assignments)})
        buf = io.StringIO()
        buf.write("method,k,ari\n")
        for row in recovery:
            buf.write(f"{row['method']},{row['k']},{row['ari']!r}\n")
        ws.write("recovery.csv", buf.getvalue().encode())
    emit_report(manifest, report, ws, recovery)
    return report


def stage_plotdata(cfg, ws, dataset, feature_sets, assignments):
    """Representative series of the DTW k=3 clusters and a 2-D PCA scatter per method."""
    if "dtw" in feature_sets and len(dataset) > PLOT_K:
        dist = feature_sets["dtw"].values
        model = kmeans_fit(feature_sets["dtw"], PLOT_K, cfg.stage_seed("plotdata"), n_init=cfg.n_init)
        buf = io.StringIO()
        buf.write("cluster,size,customer_id,step,timestamp,amount\n")
        for c in range(PLOT_K):
            members = np.flatnonzero(model.assignments == c)
            # medoid: smallest total DTW distance to the rest of its cluster
            rep = members[np.argmin(dist[np.ix_(members, members)].sum(axis=1))]
            seq = dataset.sequences[rep]
            for step, r in enumerate(seq.records):
                buf.write(f"{c},{len(members)},{seq.customer_id},{step},{r.timestamp},{r.amount!r}\n")
        ws.write("plotdata_series.csv", buf.getvalue().encode())
    for method, fm in feature_sets.items():
        q = min(2, fm.shape[1], len(fm) - 1)
        try:
            xy = pca_transform(fm.values, pca_fit(fm.values, q=q))
        except CustsegError as exc:
            log.warning("no scatter for %s: %s", method, exc)
            continue
        if xy.shape[1] < 2:
            xy = np.column_stack([xy, np.zeros(len(xy))])
        labels = assignments.get(method)
        buf = io.StringIO()
        buf.write("customer_id,cluster,pc1,pc2\n")
        for i, cid in enumerate(fm.customer_ids):
            c = "" if labels is None else int(labels[i])
            buf.write(f"{cid},{c},{xy[i, 0]!r},{xy[i, 1]!r}\n")
        ws.write(f"plotdata_pca_{method}.csv", buf.getvalue().encode())


# --------------------------------------------------------------------------
# report


def _fmt(v):
    return MISSING if v is None else f"{v:.3f}"


def emit_report(manifest: RunManifest | None, metrics: MetricsReport, ws: Workspace | None = None, recovery=None):
    """Render the metrics grid as a text table plus JSON.

    Rows are k, columns are (SC, DBI) pairs per method.  The best SC (max)
    and best DBI (min) of each method carry a ``*``; missing cells show a
    dash and a numbered note with the recorded reason.  Returns
    ``(text, doc)`` and writes ``report.txt`` / ``report.json`` when a
    workspace is given.
    """
    methods = [m for m in METHODS if m in metrics.methods] + [m for m in metrics.methods if m not in METHODS]
    best = {m: metrics.best(m) for m in methods}
    notes = []
    width = 20
    head1 = f"{'k':>3} |" + "|".join(f"{METHOD_TITLES.get(m, m):^{width}}" for m in methods)
    head2 = f"{'':>3} |" + "|".join(f"{'SC':>9}{'DBI':>9}  " for _ in methods)
    lines = ["Comparison of k-means clustering results"]
    if manifest is not None:
        lines.append(f"seed {manifest.seed}, custseg {manifest.version}")
    lines += ["", head1, head2, "-" * len(head1)]
    sections = []
    for m in methods:
        rows = []
        for cell in metrics.column(m):
            rows.append(
                {
                    "k": cell.k,
                    "SC": _fmt(cell.sc),
                    "DBI": _fmt(cell.dbi),
                    "best_SC": best[m][0] == cell.k,
                    "best_DBI": best[m][1] == cell.k,
                    "reason": cell.reason or None,
                }
            )
        sections.append(
            {"method": m, "title": METHOD_TITLES.get(m, m), "best_SC_k": best[m][0], "best_DBI_k": best[m][1], "rows": rows}
        )
    for i, k in enumerate(metrics.ks):
        parts = []
        for sec in sections:
            row = sec["rows"][i]
            if row["reason"]:
                notes.append(f"[{len(notes) + 1}] {sec['method']} k={k}: {row['reason']}")
                tag = f"[{len(notes)}]"
                parts.append(f"{MISSING + tag:>9}{MISSING:>9}  ")
                continue
            sc = row["SC"] + ("*" if row["best_SC"] else " ")
            dbi = row["DBI"] + ("*" if row["best_DBI"] else " ")
            parts.append(f"{sc:>9}{dbi:>9}  ")
        lines.append(f"{k:>3} |" + "|".join(parts))
    lines += ["", "* best per method (max SC, min DBI)"]
    lines += notes
    doc = {"title": "Comparison of k-means clustering results", "k": metrics.ks, "methods": sections}
    if manifest is not None:
        doc["seed"] = manifest.seed
        doc["version"] = manifest.version
    if recovery:
        lines += ["", "Agreement with planted labels (adjusted Rand index)"]
        lines += [f"  {r['method']:<7} k={r['k']}  {r['ari']:.3f}" for r in recovery]
        doc["recovery"] = [{**r, "ari": round(r["ari"], 6)} for r in recovery]
    text = "\n".join(lines) + "\n"
    if ws is not None:
        ws.write("report.txt", text.encode())
        ws.write("report.json", json.dumps(doc, indent=1).encode())
    return text, doc


# --------------------------------------------------------------------------
# full run


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    """Run every stage into ``cfg.out`` and return the finalised manifest.

    Configuration and data checks happen before the first write.  A failing
    stage leaves its predecessors' files in place, marks the manifest
    ``FAILED`` with the stage name and raises :class:`StageError`.
    """
    dataset, labels = prepare(cfg)
    ws = Workspace(cfg.out)
    manifest = RunManifest(config=cfg.to_dict(), seed=cfg.seed)
    state = {}
    feature_methods = list(cfg.methods)

    stages = [
        ("ingest", lambda: stage_ingest(cfg, ws, dataset, labels)),
        ("train", lambda: state.update(model=stage_train(cfg, ws, dataset)) if cfg.needs_training else None),
        ("features", lambda: state.update(features=stage_features(cfg, ws, dataset, feature_methods, state.get("model")))),
        ("cluster", lambda: state.update(assign=stage_cluster(cfg, ws, state["features"]))),
        ("evaluate", lambda: stage_evaluate(cfg, ws, state["features"], labels, manifest)),
        (
            "plotdata",
            lambda: stage_plotdata(
                cfg, ws, dataset, state["features"], {m: a.assignments for m, a in state["assign"].items()}
            ),
        ),
    ]
    for name, fn in stages:
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            manifest.stages.append(StageRecord(name, time.perf_counter() - t0, "FAILED", f"{type(exc).__name__}: {exc}"))
            manifest.status = "FAILED"
            manifest.failed_stage = name
            manifest.finalise(ws)
            raise StageError(name, exc) from exc
        manifest.stages.append(StageRecord(name, time.perf_counter() - t0))
        log.info("stage %s done in %.2fs", name, manifest.stages[-1].seconds)
    manifest.status = "OK"
    return manifest.finalise(ws)
