"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import dataclasses
import itertools
import json
import time
from functools import lru_cache

import numpy as np
from conftest import ACCEPTANCE_LINES
from oracles import davies_bouldin_direct, optimal_inertia, silhouette_direct

from custseg import pipeline
from custseg import seq2seq as s2s
from custseg.cluster import elbow_from_inertias, kmeans_fit, silhouette, davies_bouldin
from custseg.config import PipelineConfig
from custseg.dtw import dataset_series, dtw_distance, dtw_matrix
from custseg.features import FeatureMatrix, concatenate_blocks, demographic_features, pca_fit, pca_transform
from custseg.ingest import generate_synthetic
from custseg.preprocess import EOS, SOS, PaddedSequenceBatch, teacher_arrays


def record(number, title, ok, detail):
    line = f"AC{number:02d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@lru_cache(maxsize=None)
def path_index(S, T):
    """Flat cell indices of every warp path on an S x T grid, padded with -1."""
    paths = []

    def walk(i, j, acc):
        if (i, j) == (S - 1, T - 1):
            paths.append(acc)
            return
        for di, dj in ((1, 1), (0, 1), (1, 0)):
            if i + di < S and j + dj < T:
                walk(i + di, j + dj, acc + [(i + di) * T + j + dj])

    walk(0, 0, [0])
    width = max(len(p) for p in paths)
    return np.array([p + [-1] * (width - len(p)) for p in paths])


def brute_force_dtw(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    delta = np.append(np.abs(a[:, None] - b[None, :]).ravel(), 0.0)  # index -1 hits the 0 pad
    idx = path_index(len(a), len(b))
    return float(delta[idx].sum(axis=1).min())


def test_ac01_dtw_matches_enumeration():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    exact = True
    worst = 0.0
    for trial in range(500):
        S, T = rng.integers(1, 7, size=2)
        if trial % 2 == 0:
            a, b = rng.integers(-9, 10, S), rng.integers(-9, 10, T)
            exact &= dtw_distance(a, b)[0] == brute_force_dtw(a, b)
        else:
            a, b = rng.normal(size=S), rng.normal(size=T)
            worst = max(worst, abs(dtw_distance(a, b)[0] - brute_force_dtw(a, b)))
    elapsed = time.perf_counter() - t0
    ok = exact and worst <= 1e-12 and elapsed < 10
    record(1, "DTW oracle equivalence", ok, f"500 pairs, integer exact={exact}, real max err={worst:.1e}, {elapsed:.2f}s")


def test_ac02_dtw_hand_cases():
    c1, path = dtw_distance([1, 2, 3], [2, 3])
    c2, _ = dtw_distance([5.5, -1, 2], [5.5, -1, 2])
    c3, _ = dtw_distance([0], [3])
    c4, _ = dtw_distance([[0, 0]], [[3, 4]])
    ok = c1 == 1 and c2 == 0 and c3 == 3 and c4 == 5
    record(2, "DTW hand cases", ok, f"([1,2,3],[2,3])={c1} path={path}, identical={c2}, singleton={c3} / 2-D {c4}")


def test_ac03_distance_matrix():
    ds, _ = generate_synthetic()
    t0 = time.perf_counter()
    m = dtw_matrix(dataset_series(ds), customer_ids=ds.customer_ids).values
    elapsed = time.perf_counter() - t0
    ok = (
        m.shape == (300, 300)
        and np.array_equal(m, m.T)
        and np.all(np.diag(m) == 0)
        and np.all(m >= 0)
        and elapsed < 60
    )
    record(3, "DTW distance matrix", ok, f"300 customers, symmetric/zero-diagonal/non-negative, {elapsed:.2f}s")


def test_ac04_gradient_check(monkeypatch):
    cfg = s2s.TrainConfig(hidden_size=3, dense_size=3, latent_dim=2)
    rng = np.random.default_rng(0)
    batch = PaddedSequenceBatch.from_rows([rng.normal(size=(3, 4)), rng.normal(size=(3, 4))])
    mb = s2s.ModelBatch.from_padded(batch)
    params = s2s.init_params(cfg, np.random.default_rng(1))
    good = s2s.gradient_check(params, mb, cfg)
    monkeypatch.setattr(s2s, "_forget_gate_grad", lambda dc, c_prev: dc)
    bad = s2s.gradient_check(params, mb, cfg)
    ok = good < 1e-4 and bad > 1e-2
    record(4, "gradient check", ok, f"max relative error {good:.1e} (corrupted forget gate: {bad:.2f})")


def test_ac05_teacher_forcing():
    ds, _ = generate_synthetic()
    batch = PaddedSequenceBatch.from_dataset(ds)
    inputs, targets, _ = teacher_arrays(batch)
    ok = True
    for i, n in enumerate(batch.lengths):
        ok &= np.array_equal(targets[i, : n - 1], inputs[i, 1:n])
        ok &= np.array_equal(targets[i, n - 1], inputs[i, n])
        ok &= np.all(inputs[i, 0] == SOS) and np.all(targets[i, n] == EOS)
    ok &= SOS == -1.0 and EOS == -2.0
    record(5, "teacher forcing", bool(ok), f"{len(batch)} customers, target[t] = input[t+1], SOS=-1 row, EOS=-2 row")


def test_ac06_copy_task():
    batch = s2s.copy_task_batch()
    a = s2s.train(batch, s2s.COPY_TASK_CONFIG)
    b = s2s.train(batch, s2s.COPY_TASK_CONFIG)
    la, lb = [r.train_loss for r in a.history], [r.train_loss for r in b.history]
    ratio = la[-1] / la[0]
    ok = ratio < 0.1 and la == lb and len(la) - 1 <= 200
    record(6, "copy task training", ok, f"final/initial loss {ratio:.3f} after {len(la) - 1} epochs, repeat run bit-identical={la == lb}")


def test_ac07_metric_oracles():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 51))
        k = int(rng.integers(2, min(5, n - 1) + 1))
        X = rng.normal(size=(n, int(rng.integers(1, 5))))
        labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
        rng.shuffle(labels)
        worst = max(
            worst,
            abs(silhouette(X, labels) - silhouette_direct(X, labels)),
            abs(davies_bouldin(X, labels) - davies_bouldin_direct(X, labels)),
        )
    x = np.array([[0.0], [0.1], [10.0], [10.1]])
    sc, dbi = silhouette(x, [0, 0, 1, 1]), davies_bouldin(x, [0, 0, 1, 1])
    ok = worst <= 1e-9 and abs(sc - 0.99) <= 1e-5 and abs(dbi - 0.01) <= 1e-9
    record(7, "SC/DBI oracles", ok, f"100 instances max diff {worst:.1e}; hand case SC={sc:.5f} DBI={dbi:.9f}")


def test_ac08_kmeans_optimality():
    rng = np.random.default_rng(8)
    hits, monotone = 0, True
    for _ in range(50):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(max(k, 2), 9))
        X = rng.normal(size=(n, 2))
        model = kmeans_fit(X, k, seed=int(rng.integers(2**31)), n_init=10)
        hits += abs(model.inertia - optimal_inertia(X, k)) <= 1e-9
        h = model.inertia_history
        monotone &= all(b <= a + 1e-12 for a, b in zip(h, h[1:]))
    ok = hits >= 48 and monotone
    record(8, "k-means optimality", ok, f"{hits}/50 at the brute-force optimum, inertia non-increasing={monotone}")


def test_ac09_elbow(shipped_run):
    k_profile = elbow_from_inertias([1, 2, 3, 4, 5], [100, 40, 20, 18, 17])
    _, _, out, _ = shipped_run
    rows = [l.split(",") for l in (out / "elbow.csv").read_text().splitlines()[1:]]
    hybrid = [(int(k), float(j)) for m, k, j in rows if m == "hybrid"]
    k_planted = elbow_from_inertias([k for k, _ in hybrid], [j for _, j in hybrid])
    ok = k_profile == 2 and k_planted == 3
    record(9, "elbow selection", ok, f"profile [100,40,20,18,17] -> k={k_profile}; planted 3-segment data (hybrid) -> k={k_planted}")


def test_ac10_planted_recovery(shipped_run):
    _, _, out, elapsed = shipped_run
    rec = {r["method"]: r for r in json.loads((out / "report.json").read_text())["recovery"]}
    ari = rec["hybrid"]["ari"]
    ok = rec["hybrid"]["k"] == 3 and ari >= 0.8 and elapsed < 300
    others = ", ".join(f"{m} {r['ari']:.2f}" for m, r in rec.items() if m != "hybrid")
    record(10, "planted-cluster recovery", ok, f"hybrid ARI at k=3 = {ari:.3f} ({others}); full pipeline {elapsed:.1f}s")


def test_ac11_report_structure(shipped_run, tmp_path):
    cfg, manifest, out, _ = shipped_run
    doc = json.loads((out / "report.json").read_text())
    shape_ok = [s["method"] for s in doc["methods"]] == ["lstm", "dtw", "rfm", "hybrid"]
    shape_ok &= all([r["k"] for r in s["rows"]] == [2, 3, 4, 5, 6] for s in doc["methods"])
    fmt_ok = all(
        len(r[key].split(".")[1]) == 3 for s in doc["methods"] for r in s["rows"] for key in ("SC", "DBI")
    )
    metrics = json.loads((out / "metrics.json").read_text())
    shape_ok &= len(metrics["cells"]) == 20 and all(c["SC"] is not None and c["DBI"] is not None for c in metrics["cells"])
    again = pipeline.run_pipeline(dataclasses.replace(cfg, out=str(tmp_path / "b")))
    same = {f["path"]: f["sha256"] for f in again.files} == {f["path"]: f["sha256"] for f in manifest.files}
    ok = shape_ok and fmt_ok and same
    record(11, "report structure", ok, f"4 methods x k=2..6 x (SC, DBI), 3 decimals={fmt_ok}, {len(manifest.files)} artifacts identical on rerun={same}")


def test_ac12_pca(shipped_run):
    rng = np.random.default_rng(12)
    x = rng.normal(size=(60, 7)) @ rng.normal(size=(7, 7))
    y = pca_transform(x, pca_fit(x, q=7))
    dx = np.linalg.norm(x[:, None] - x[None], axis=-1)
    dy = np.linalg.norm(y[:, None] - y[None], axis=-1)
    dist_err = float(np.max(np.abs(dx - dy)))
    t = rng.normal(size=40)
    ratio = float(pca_fit(np.column_stack([t, -2 * t, 0.5 * t])).explained_variance_ratio[0])
    _, _, out, _ = shipped_run
    lstm = FeatureMatrix.from_csv((out / "features_lstm.csv").read_bytes())
    dtw = FeatureMatrix.from_csv((out / "features_dtw.csv").read_bytes())
    demo = demographic_features(generate_synthetic(PipelineConfig().synth_config())[0])
    m, n, d = lstm.shape[1], dtw.shape[1], demo.shape[1]
    width = concatenate_blocks(lstm, dtw, demo).shape[1]
    ok = dist_err <= 1e-9 and abs(ratio - 1.0) <= 1e-12 and width == m + n + d
    record(12, "PCA", ok, f"full-rank distance err {dist_err:.1e}, collinear ratio {ratio:.12f}, hybrid width {width} = {m}+{n}+{d}")
