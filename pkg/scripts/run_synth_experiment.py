#!/usr/bin/env python3
"""Synthetic quickstart end to end: generate, train, evaluate, explain, then check the signatures.

    python scripts/run_synth_experiment.py [--config configs/synth_quickstart.yaml] [--out DIR]

Exits 1 if test accuracy stays below 95% or a class's signature channels are
missing from its top-4 attention ranking.
"""
import argparse
import csv
import json
import sys
import time
from pathlib import Path

from iamseq.cli import main as iamseq
from iamseq.config import load_config
from iamseq.data import signature_channels


def main() -> int:
    repo = Path(__file__).resolve().parents[1]
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(repo / "configs" / "synth_quickstart.yaml"))
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()

    common = ["--config", args.config]
    if args.out:
        common += ["--out", args.out]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]
    run = Path(load_config(args.config, seed=args.seed, out=args.out).out)

    start = time.perf_counter()
    for cmd in ("synth", "train", "eval", "explain"):
        code = iamseq([cmd, *common])
        if code:
            return code
    elapsed = time.perf_counter() - start

    history = list(csv.DictReader((run / "history.csv").open()))
    peak = max(float(r["test_acc"]) for r in history)
    acc = json.loads((run / "eval" / "metrics.json").read_text())["accuracy"]
    print(f"\n{len(history)} epochs in {elapsed:.0f}s; peak test acc {peak:.4f}; best checkpoint {acc:.4f}")
    ok = peak >= 0.95
    for row in csv.DictReader((run / "explain" / "cause_summary.csv").open()):
        k = int(row["class"])
        top = row["top_features"].split() if row["top_features"] != "omitted" else []
        sig = signature_channels(k)
        hit = all(str(ch) in top for ch in sig)
        ok &= hit or not sig
        print(f"class {k}: signature {sig} top-4 {top} {'ok' if hit or not sig else 'MISS'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
