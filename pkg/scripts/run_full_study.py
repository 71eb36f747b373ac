#!/usr/bin/env python3
"""Run the whole study end to end and collect every table in one place.

Produces, under --outdir:
  run/                 the default-recipe training run (checkpoints, history, report)
  ablate-augmentation.csv, ablate-loss.csv, ablate-trick.csv
  fewshot.csv          training-set size curve
  contribution.csv     per-module contribution scores from the trained run
  compress-freeze.csv, compress-drop.csv

With --quick the corpus and model shrink so the full script finishes in
well under a minute; results are then only smoke-level.
"""

import argparse
import csv
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tbpslab import experiments  # noqa: E402
from tbpslab.config import dump_yaml, fingerprint, materialize, resolve  # noqa: E402

QUICK = [
    "data.n_identities=24",
    "data.images_per_identity=2",
    "model.hidden_dim=24",
    "model.embed_dim=12",
    "train.epochs=6",
    "train.batch_size=16",
]


def write_csv(rows, path, fp, seed):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config={fp} seed={seed}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--outdir", default="study")
    parser.add_argument("--preset", default="tbps-clip")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quick", action="store_true", help="tiny corpus and model")
    args = parser.parse_args()

    overrides = [f"seed={args.seed}"] + (QUICK if args.quick else [])
    config = resolve(preset=args.preset, overrides=overrides)
    exp = materialize(config)
    fp = fingerprint(config)
    os.makedirs(args.outdir, exist_ok=True)
    dump_yaml(config, os.path.join(args.outdir, "config.yaml"))

    def stage(label, fn):
        started = time.time()
        out = fn()
        print(f"[{time.time() - started:6.1f}s] {label}")
        return out

    run = stage("training run", lambda: experiments.run_training(
        exp, out_dir=os.path.join(args.outdir, "run")))
    print(f"         held-out Rank-1 {run.report.rank1:.4f}, mAP {run.report.mean_ap:.4f}")

    dataset = run.dataset
    tables = {
        "ablate-augmentation": lambda: experiments.ablate_augmentation(exp, dataset),
        "ablate-loss": lambda: experiments.ablate_loss(exp, dataset),
        "ablate-trick": lambda: experiments.ablate_tricks(exp, dataset),
        "fewshot": lambda: experiments.fewshot_curve(exp),
        "contribution": lambda: experiments.contribution_table(run),
        "compress-freeze": lambda: experiments.compression_series(exp, (0, 1, 2, 3), "freeze", dataset),
        "compress-drop": lambda: experiments.compression_series(exp, (0, 1, 2, 3), "drop", dataset),
    }
    for name, fn in tables.items():
        rows = stage(name, fn)
        write_csv(rows, os.path.join(args.outdir, f"{name}.csv"), fp, exp.seed)

    print(f"study complete: {args.outdir} (config {fp})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
