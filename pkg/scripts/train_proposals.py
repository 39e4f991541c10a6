#!/usr/bin/env python3
"""Train the shipped proposal parameters into params/.

Runs the same code path as `neuralblock train`, one pinned config per
motif, so the cached artifacts are bit-reproducible from this repository:

    python scripts/train_proposals.py            # train whatever is missing
    python scripts/train_proposals.py --force    # retrain everything

Each motif gets params/<name>/ holding params.npz, train_report.json, and
loss_curve.csv. Existing artifacts are kept unless --force is given.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

from neuralblock import cli

ROOT = pathlib.Path(__file__).resolve().parent.parent
JOBS = (
    ("grid9", ROOT / "configs" / "train_grid9.json"),
    ("gmm-pair", ROOT / "configs" / "train_gmm_pair.json"),
)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--force", action="store_true", help="retrain even if params exist")
    ap.add_argument("--only", choices=[name for name, _ in JOBS], default=None)
    args = ap.parse_args(argv)

    for name, config in JOBS:
        if args.only is not None and name != args.only:
            continue
        out_dir = ROOT / "params" / name
        target = out_dir / "params.npz"
        if target.exists() and not args.force:
            print(f"[skip] {target} exists (use --force to retrain)")
            continue
        print(f"[train] {name}: config {config}")
        rc = cli.main(["train", "--config", str(config), "--out", str(out_dir)])
        if rc != 0:
            return rc
        report = json.loads((out_dir / "train_report.json").read_text())
        print(f"[done] {name}: wall {report['wall_clock_secs']:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
