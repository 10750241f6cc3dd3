"""Command line entry point.

``custseg pipeline`` runs everything.  The other subcommands run one
stage and read what earlier stages wrote to ``--out``, so a stage can be
re-run in isolation.  Every subcommand refreshes ``manifest.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time

import numpy as np

from .config import METHODS, load_config, parse_k_range
from .errors import ConfigError, CustsegError, StageError
from .ingest import generate_synthetic, parse_labels
from .pipeline import (
    RunManifest,
    StageRecord,
    Workspace,
    prepare,
    read_assignments,
    read_features,
    run_pipeline,
    stage_cluster,
    stage_evaluate,
    stage_features,
    stage_ingest,
    stage_plotdata,
    stage_train,
)

log = logging.getLogger("custseg")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    common.add_argument("--k-range", help="k values for the metrics grid, e.g. 2..6")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="custseg", description="Customer segmentation from transaction sequences.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset with planted segments")
    sub.add_parser("ingest", parents=[common], help="validate input CSVs and write canonical copies")
    sub.add_parser("train", parents=[common], help="train the encoder-decoder")
    feat = sub.add_parser("features", parents=[common], help="compute one feature matrix")
    feat.add_argument("method", choices=METHODS)
    sub.add_parser("cluster", parents=[common], help="elbow selection and k-means assignments")
    sub.add_parser("evaluate", parents=[common], help="SC/DBI grid and report")
    sub.add_parser("pipeline", parents=[common], help="run every stage")
    return parser


def config_from_args(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if args.methods is not None:
        changes["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.k_range is not None:
        changes["k_range"] = parse_k_range(args.k_range)
    cfg = dataclasses.replace(cfg, **changes)
    cfg.validate()
    return cfg


def _run_stage(cfg, name, fn):
    """Run one stage and fold its timing into the existing manifest, if any."""
    ws = Workspace(cfg.out)
    manifest = RunManifest(config=cfg.to_dict(), seed=cfg.seed)
    if ws.exists("manifest.json"):
        old = json.loads(ws.read("manifest.json"))
        manifest.stages = [StageRecord(**s) for s in old.get("stages", []) if s["name"] != name]
    t0 = time.perf_counter()
    try:
        fn(ws)
    except Exception as exc:
        manifest.stages.append(StageRecord(name, time.perf_counter() - t0, "FAILED", f"{type(exc).__name__}: {exc}"))
        manifest.status, manifest.failed_stage = "FAILED", name
        manifest.finalise(ws)
        raise StageError(name, exc) from exc
    manifest.stages.append(StageRecord(name, time.perf_counter() - t0))
    manifest.status = "OK"
    manifest.finalise(ws)


def _labels_aligned(ws, ids):
    if not ws.exists("labels.csv"):
        return None
    table = parse_labels(ws.read("labels.csv"))
    if any(c not in table for c in ids):
        return None
    return np.array([table[c] for c in ids])


def dispatch(args):
    cfg = config_from_args(args)
    cmd = args.command
    if cmd == "pipeline":
        manifest = run_pipeline(cfg)
        print(f"pipeline finished: {len(manifest.files)} files in {cfg.out}")
        return 0
    if cmd == "synth":
        dataset, labels = generate_synthetic(cfg.synth_config())
        _run_stage(cfg, "synth", lambda ws: stage_ingest(cfg, ws, dataset, labels))
    elif cmd == "ingest":
        dataset, labels = prepare(cfg, Workspace(cfg.out), prefer_workspace=True)
        _run_stage(cfg, "ingest", lambda ws: stage_ingest(cfg, ws, dataset, labels))
    elif cmd == "train":
        dataset, _ = prepare(cfg, Workspace(cfg.out), prefer_workspace=True)
        _run_stage(cfg, "train", lambda ws: stage_train(cfg, ws, dataset))
    elif cmd == "features":
        dataset, _ = prepare(cfg, Workspace(cfg.out), prefer_workspace=True)
        _run_stage(cfg, f"features:{args.method}", lambda ws: stage_features(cfg, ws, dataset, [args.method]))
    elif cmd == "cluster":

        def run(ws):
            feats = read_features(ws, cfg.methods)
            stage_cluster(cfg, ws, feats)

        _run_stage(cfg, "cluster", run)
    elif cmd == "evaluate":

        def run(ws):
            feats = read_features(ws, cfg.methods)
            ids = next(iter(feats.values())).customer_ids
            stage_evaluate(cfg, ws, feats, _labels_aligned(ws, ids), RunManifest(config={}, seed=cfg.seed))
            if ws.exists("assignments.csv"):
                dataset, _ = prepare(cfg, ws, prefer_workspace=True)
                stage_plotdata(cfg, ws, dataset, feats, read_assignments(ws))

        _run_stage(cfg, "evaluate", run)
    print(f"{cmd} finished: outputs in {cfg.out}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return 1
    except CustsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
