"""Comparison report: markdown table, aggregate CSV, and a metrics figure.

One row per variant in a fixed order, columns SSIM/MSE/PSNR as mean ± std
over the evaluated cases, best value per column bolded, missing variants
shown as an em-dash row. Rows for the same variant must come from the same
run config unless mixing is explicitly allowed.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

ROW_ORDER = ("2d_slice", "2d_seqpos", "pseudo3d", "3d", "latent3d", "wavelet3d")
DISPLAY_NAMES = {
    "2d_slice": "2D slice-wise",
    "2d_seqpos": "2D seq-pos",
    "pseudo3d": "Pseudo-3D",
    "3d": "3D",
    "latent3d": "Latent 3D",
    "wavelet3d": "Wavelet 3D",
}

EVAL_COLUMNS = ["variant", "case", "ssim", "mse", "psnr", "psnr_infinite",
                "voxel_count", "config_hash", "tool_version"]


class ReportError(ValueError):
    pass


@dataclass
class VariantStats:
    n: int
    ssim_mean: float
    ssim_std: float
    mse_mean: float
    mse_std: float
    psnr_mean: float     # inf when any case saturated
    psnr_std: float      # nan when psnr_mean is inf


def read_eval_rows(paths) -> list[dict]:
    rows = []
    for path in paths:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(EVAL_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ReportError(f"{path}: missing eval columns {sorted(missing)}")
            for row in reader:
                rows.append({
                    "variant": row["variant"],
                    "case": row["case"],
                    "ssim": float(row["ssim"]),
                    "mse": float(row["mse"]),
                    "psnr": float(row["psnr"]),
                    "config_hash": row["config_hash"],
                    "tool_version": row["tool_version"],
                })
    if not rows:
        raise ReportError("no evaluation rows found")
    return rows


def check_compatibility(rows, allow_mixed: bool = False) -> None:
    """Same-variant rows must share one config hash; one tool version overall."""
    if allow_mixed:
        return
    versions = {r["tool_version"] for r in rows}
    if len(versions) > 1:
        raise ReportError(
            f"mixed tool versions {sorted(versions)}; pass --allow-mixed to override")
    by_variant: dict = {}
    for r in rows:
        by_variant.setdefault(r["variant"], set()).add(r["config_hash"])
    mixed = {v: sorted(h) for v, h in by_variant.items() if len(h) > 1}
    if mixed:
        raise ReportError(
            f"incompatible config hashes within variant(s) {sorted(mixed)}; "
            "pass --allow-mixed to override")


def aggregate(rows) -> dict:
    out: dict = {}
    for variant in {r["variant"] for r in rows}:
        vals = [r for r in rows if r["variant"] == variant]
        ssim = np.array([v["ssim"] for v in vals])
        mse = np.array([v["mse"] for v in vals])
        psnr = np.array([v["psnr"] for v in vals])

        def std(a):
            return float(a.std(ddof=1)) if len(a) > 1 else 0.0

        if np.isinf(psnr).any():
            p_mean, p_std = math.inf, math.nan
        else:
            p_mean, p_std = float(psnr.mean()), std(psnr)
        out[variant] = VariantStats(
            n=len(vals),
            ssim_mean=float(ssim.mean()), ssim_std=std(ssim),
            mse_mean=float(mse.mean()), mse_std=std(mse),
            psnr_mean=p_mean, psnr_std=p_std)
    return out


def _cell(mean: float, std: float, bold: bool) -> str:
    if math.isinf(mean):
        text = "inf"
    else:
        text = f"{mean:.4f} ± {std:.4f}"
    return f"**{text}**" if bold else text


def render_markdown(stats: dict, hashes: dict | None = None) -> str:
    present = [v for v in ROW_ORDER if v in stats]
    best_ssim = max((stats[v].ssim_mean for v in present), default=None)
    best_mse = min((stats[v].mse_mean for v in present), default=None)
    best_psnr = max((stats[v].psnr_mean for v in present), default=None)

    lines = ["# Inpainting comparison",
             "",
             "Masked-region scores, mean ± standard deviation over the "
             "evaluated cases.",
             "",
             "| Method | SSIM ↑ | MSE ↓ | PSNR ↑ |",
             "|---|---|---|---|"]
    for v in ROW_ORDER:
        name = DISPLAY_NAMES[v]
        if v not in stats:
            lines.append(f"| {name} | — | — | — |")
            continue
        s = stats[v]
        lines.append("| {} | {} | {} | {} |".format(
            name,
            _cell(s.ssim_mean, s.ssim_std, s.ssim_mean == best_ssim),
            _cell(s.mse_mean, s.mse_std, s.mse_mean == best_mse),
            _cell(s.psnr_mean, s.psnr_std, s.psnr_mean == best_psnr)))
    if hashes:
        lines += ["", "Run configs:"]
        for v in ROW_ORDER:
            if v in hashes:
                lines.append(f"- {DISPLAY_NAMES[v]}: `{sorted(hashes[v])[0][:12]}` "
                             f"(n={stats[v].n})")
    lines.append("")
    return "\n".join(lines)


def write_aggregate_csv(stats: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "n", "ssim_mean", "ssim_std",
                         "mse_mean", "mse_std", "psnr_mean", "psnr_std"])
        for v in ROW_ORDER:
            if v not in stats:
                continue
            s = stats[v]
            writer.writerow([v, s.n,
                             f"{s.ssim_mean:.6f}", f"{s.ssim_std:.6f}",
                             f"{s.mse_mean:.6f}", f"{s.mse_std:.6f}",
                             "inf" if math.isinf(s.psnr_mean) else f"{s.psnr_mean:.6f}",
                             "nan" if math.isnan(s.psnr_std) else f"{s.psnr_std:.6f}"])


def write_figure(stats: dict, path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    present = [v for v in ROW_ORDER if v in stats]
    labels = [DISPLAY_NAMES[v] for v in present]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    panels = [("SSIM ↑", "ssim_mean", "ssim_std"),
              ("MSE ↓", "mse_mean", "mse_std"),
              ("PSNR ↑", "psnr_mean", "psnr_std")]
    for ax, (title, mkey, skey) in zip(axes, panels):
        means = [getattr(stats[v], mkey) for v in present]
        stds = [getattr(stats[v], skey) for v in present]
        finite = [0.0 if not math.isfinite(m) else m for m in means]
        errs = [0.0 if not math.isfinite(s) else s for s in stds]
        ax.bar(range(len(present)), finite, yerr=errs, capsize=3,
               color="#4878a8")
        ax.set_xticks(range(len(present)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.set_title(title)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(eval_csvs, out_dir: str, allow_mixed: bool = False) -> dict:
    """Read eval CSVs, enforce compatibility, and emit md/csv/png outputs."""
    rows = read_eval_rows(eval_csvs)
    check_compatibility(rows, allow_mixed)
    stats = aggregate(rows)
    hashes: dict = {}
    for r in rows:
        hashes.setdefault(r["variant"], set()).add(r["config_hash"])
    md = render_markdown(stats, hashes)
    with open(os.path.join(out_dir, "report.md"), "w", encoding="utf-8") as fh:
        fh.write(md)
    write_aggregate_csv(stats, os.path.join(out_dir, "report.csv"))
    write_figure(stats, os.path.join(out_dir, "report.png"))
    return stats
