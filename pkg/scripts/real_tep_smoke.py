#!/usr/bin/env python3
"""Convert raw TEP .dat files and run a short training as a smoke test.

    python scripts/real_tep_smoke.py RAW_DIR [--epochs 5] [--out runs/tep_smoke]

RAW_DIR must hold d00.dat .. d21.dat and d00_te.dat .. d21_te.dat. Test runs
are labelled normal before --fault-start (default 160). The attention top
features are printed next to published reference features, for reading only.
"""
import argparse
import csv
import sys
from pathlib import Path

import yaml

from iamseq.cli import main as iamseq

REFERENCE_TOP = {0: "39 40", 1: "0 3 43", 2: "9 27 33 46"}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("raw_dir", type=Path)
    ap.add_argument("--out", type=Path, default=Path("runs/tep_smoke"))
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--fault-start", type=int, default=160)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = args.out / "data"
    for k in range(22):
        train_file, test_file = args.raw_dir / f"d{k:02d}.dat", args.raw_dir / f"d{k:02d}_te.dat"
        if not train_file.exists():
            if k == 21:
                break  # some distributions stop at fault 20
            print(f"missing {train_file}", file=sys.stderr)
            return 3
        for code in (iamseq(["prep", str(train_file), "--label", str(k), "--out", str(data / "train"), "-q"]),
                     iamseq(["prep", str(test_file), "--label", str(k), "--fault-start", str(args.fault_start),
                             "--out", str(data / "test"), "-q"])):
            if code:
                return code
    classes = len(list((data / "train").glob("*.csv")))
    cfg = {"seed": args.seed, "out": str(args.out),
           "data": {"train_dir": str(data / "train"), "test_dir": str(data / "test"), "per_row_labels": True},
           "model": {"num_classes": classes}, "train": {"epochs": args.epochs},
           "explain": {"top_k": 4, "correct_only": False}}
    cfg_path = args.out / "smoke.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    for cmd in ("train", "eval", "explain"):
        code = iamseq([cmd, "--config", str(cfg_path)])
        if code:
            return code

    losses = [float(r["train_loss"]) for r in csv.DictReader((args.out / "history.csv").open())]
    if not all(b < a for a, b in zip(losses[:3], losses[1:3])):
        print("FLAG: training loss did not decrease monotonically over the first 3 epochs")
    heatmaps = len(list((args.out / "explain").glob("heatmap_class_*.svg")))
    print(f"{heatmaps} heatmaps written")
    for row in csv.DictReader((args.out / "explain" / "cause_summary.csv").open()):
        c = int(row["class"])
        if c in REFERENCE_TOP:
            print(f"class {c}: top-4 {row['top_features']}  (reference features {REFERENCE_TOP[c]})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
