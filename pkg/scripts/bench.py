#!/usr/bin/env python3
"""Toy-benchmark harness: phantom -> train -> sample -> eval -> report.

Drives the installed CLI in-process for a set of variants and prints
per-task masked MSE against the mean-fill baseline. Used to record the
reference numbers the acceptance suite pins.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from voxelpaint import config as cf
from voxelpaint import engine as eng
from voxelpaint import metrics as mx
from voxelpaint.cli import main as vp
from voxelpaint.report import ROW_ORDER
from voxelpaint.volume import load_volume

FAMILY_SHAPES = {"2d": [16, 32, 32], "3d": [32, 32, 32]}


def family(variant):
    return "2d" if variant in ("2d_slice", "2d_seqpos") else "3d"


def ensure_dataset(root, fam, seed, count, tag):
    out = os.path.join(root, f"data_{fam}_{tag}")
    if not os.path.exists(os.path.join(out, "manifest.json")):
        cfg_path = os.path.join(root, f"dataset_{fam}_{tag}.json")
        variant = "2d_slice" if fam == "2d" else "3d"
        with open(cfg_path, "w") as fh:
            json.dump({"variant": variant, "seed": seed,
                       "dataset": {"count": count,
                                   "shape": FAMILY_SHAPES[fam]}}, fh)
        assert vp(["phantom", "--config", cfg_path, "--out", out]) == 0
    return out


def run_variant(root, variant, seed, overrides=None):
    t0 = time.perf_counter()
    train_dir = ensure_dataset(root, family(variant), seed, 16, "train")
    test_dir = ensure_dataset(root, family(variant), seed + 4200, 4, "test")

    cfg = {"variant": variant, "seed": seed, "data_dir": train_dir}
    if overrides:
        cfg.update(overrides)
    cfg_path = os.path.join(root, f"{variant}.json")
    with open(cfg_path, "w") as fh:
        json.dump(cfg, fh)

    run_dir = os.path.join(root, f"run_{variant}")
    assert vp(["train", "--config", cfg_path, "--out", run_dir]) == 0
    t_train = time.perf_counter() - t0

    sample_dir = os.path.join(root, f"samples_{variant}")
    assert vp(["sample", run_dir, test_dir, "--out", sample_dir, "--force"]) == 0
    t_sample = time.perf_counter() - t0 - t_train

    eval_dir = os.path.join(root, f"eval_{variant}")
    assert vp(["eval", sample_dir, test_dir, test_dir, "--out", eval_dir,
               "--force"]) == 0

    resolved = cf.resolve_config(json.load(open(cfg_path)))
    sched = cf.schedule_from_config(resolved)
    rows = []
    for i in range(4):
        gt = load_volume(os.path.join(test_dir, f"phantom_{i:03d}.vvol"))
        mask = load_volume(os.path.join(test_dir, f"mask_{i:03d}.vvol"))
        pred = load_volume(os.path.join(sample_dir, f"sample_{i:03d}.vvol"))
        task = eng.InpaintTask(gt, mask, variant, sched)
        base = eng.mean_fill_baseline(task)
        mse_model = mx.mse_masked(pred, gt, mask)
        mse_base = mx.mse_masked(base, gt, mask)
        outside = mask.data == 0
        bitwise = bool(np.array_equal(pred.data[outside], gt.data[outside]))
        rows.append((i, mse_model, mse_base, bitwise))
    print(f"\n== {variant}: train {t_train/60:.1f} min, sample {t_sample/60:.1f} min")
    for i, mm, mb, bw in rows:
        verdict = "OK " if mm < mb else "FAIL"
        print(f"  task {i}: model MSE {mm:.5f} vs mean-fill {mb:.5f} "
              f"[{verdict}] outside-bitwise={bw}")
    sys.stdout.flush()
    return {"variant": variant, "rows": rows,
            "train_min": t_train / 60, "sample_min": t_sample / 60,
            "eval_csv": os.path.join(eval_dir, "metrics.csv")}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", default="/tmp/vp_bench")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--variants", nargs="+", default=list(ROW_ORDER))
    ap.add_argument("--iters", type=int, default=None,
                    help="override training iters for a quick probe")
    ap.add_argument("--override", type=json.loads, default=None,
                    help="JSON fragment merged into each variant config")
    args = ap.parse_args()

    os.makedirs(args.root, exist_ok=True)
    overrides = args.override or {}
    if args.iters:
        overrides.setdefault("training", {})["iters"] = args.iters
    overrides = overrides or None
    results = []
    t0 = time.perf_counter()
    for variant in args.variants:
        results.append(run_variant(args.root, variant, args.seed, overrides))
    total = (time.perf_counter() - t0) / 60

    print(f"\n=== total {total:.1f} min ===")
    summary = {"total_min": total,
               "variants": {r["variant"]: {
                   "train_min": r["train_min"], "sample_min": r["sample_min"],
                   "mse": [row[1] for row in r["rows"]],
                   "baseline": [row[2] for row in r["rows"]]} for r in results}}
    with open(os.path.join(args.root, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    csvs = [r["eval_csv"] for r in results]
    if len(csvs) == len(ROW_ORDER):
        vp(["report", *csvs, "--out", os.path.join(args.root, "report"),
            "--force"])


if __name__ == "__main__":
    main()
