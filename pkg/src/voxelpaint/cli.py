"""Command-line entry point: voxelpaint phantom|train|sample|eval|report.

Exit codes: 0 ok, 2 configuration error, 3 numeric abort, 4 I/O error.
All artifacts carry the resolved config hash and tool version; re-running a
command with the same config and seed reproduces its output files bitwise.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
import time

import numpy as np

from . import __version__
from . import autodiff as ad
from . import config as cf
from . import engine as eng
from . import metrics as mx
from . import nets
from .checkpoint import CheckpointError, load_checkpoint, restore_parameters, \
    save_checkpoint
from .codec import CodecConfig, CodecDiverged, VQCodec, train_codec
from .report import ReportError, write_report
from .schedule import ScheduleError
from .volume import MaskSpec, PhantomSpec, PipelineError, VolumeFormatError, \
    atomic_write_bytes, gen_mask, gen_phantom, load_volume, save_volume

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

CHECKPOINT_EVERY = 500


class CliIOError(IOError):
    pass


def _rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def _sub_seed(seed: int, *key) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, key)]).generate_state(1)[0])


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path: str, payload: dict) -> None:
    atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n")
                       .encode("utf-8"))


def _prepare_out(path: str, force: bool) -> None:
    os.makedirs(path, exist_ok=True)
    if not force and os.listdir(path):
        raise CliIOError(f"output directory {path} is not empty (use --force)")


def _load_run_config(args) -> dict:
    if not args.config:
        raise cf.ConfigError("--config is required")
    cfg = cf.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


# ---------------------------------------------------------------------------
# phantom

def cmd_phantom(args) -> int:
    cfg = _load_run_config(args)
    chash = cf.config_hash(cfg)
    _prepare_out(args.out, args.force)
    ds = cfg["dataset"]
    stamp = {"config_hash": chash, "tool_version": __version__}
    files = []
    for i in range(ds["count"]):
        phantom = gen_phantom(PhantomSpec(seed=_sub_seed(cfg["seed"], 10, i),
                                          shape=tuple(ds["shape"])))
        rng = _rng(cfg["seed"], 11, i)
        kind = ds["mask_kinds"][int(rng.integers(len(ds["mask_kinds"])))]
        mask = gen_mask(MaskSpec(kind=kind, fraction=tuple(ds["mask_fraction"])),
                        phantom, rng)
        phantom.meta.update(stamp)
        mask.meta.update(stamp)
        for name, vol in ((f"phantom_{i:03d}.vvol", phantom),
                          (f"mask_{i:03d}.vvol", mask)):
            path = os.path.join(args.out, name)
            save_volume(vol, path)
            files.append({"name": name, "sha256": _sha256(path)})
    _write_json(os.path.join(args.out, "manifest.json"), {
        "kind": "dataset", "seed": cfg["seed"], "count": ds["count"],
        "shape": ds["shape"], "files": files, **stamp,
    })
    print(f"wrote {ds['count']} phantom/mask pairs to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def _load_dataset(data_dir: str):
    if not data_dir:
        raise cf.ConfigError("config.data_dir must point at a phantom dataset")
    if not os.path.isdir(data_dir):
        raise CliIOError(f"dataset directory {data_dir} does not exist")
    names = sorted(n for n in os.listdir(data_dir)
                   if re.fullmatch(r"phantom_\d+\.vvol", n))
    if not names:
        raise CliIOError(f"no phantom_*.vvol files in {data_dir}")
    return [load_volume(os.path.join(data_dir, n)) for n in names]


def _codec_training_set(volumes, crop: int | None, rng) -> list:
    """Crops of pm1 images, masked images, and masks; codec sees all three."""
    out = []
    for vol in volumes:
        gt01 = vol.as_f64()
        mask = gen_mask(MaskSpec(), vol, rng)
        m = mask.as_f64()
        gtp = eng.to_pm1(gt01)
        for field in (gtp, gtp * (1.0 - m), m):
            for _ in range(2):
                if crop is None or min(field.shape) <= crop:
                    out.append(field[None])
                    continue
                start = [int(rng.integers(0, e - crop + 1)) for e in field.shape]
                sel = tuple(slice(s, s + crop) for s in start)
                out.append(field[sel][None])
    return out


def _train_codec_stage(cfg, out_dir, volumes, chash):
    ccfg = CodecConfig(latent_channels=cfg["codec"]["latent_channels"],
                       factor=cfg["codec"]["factor"],
                       codebook_size=cfg["codec"]["codebook_size"],
                       base_channels=cfg["codec"]["base_channels"])
    codec = VQCodec(ccfg, _rng(cfg["seed"], 2))
    path = os.path.join(out_dir, "codec.vpck")
    if os.path.exists(path):
        ckpt = load_checkpoint(path)
        if ckpt.config_hash != chash:
            raise cf.ConfigError(
                f"{path} was trained under a different config "
                f"({ckpt.config_hash[:12]} != {chash[:12]})")
        restore_parameters(codec, ckpt)
        codec._codebook_seeded = True
        return codec
    rng = _rng(cfg["seed"], 3)
    crops = _codec_training_set(volumes, cfg["codec"]["crop"], rng)
    history = train_codec(codec, crops, cfg["codec"]["iters"],
                          cfg["codec"]["lr"], rng)
    save_checkpoint(path, "codec", cfg, codec,
                    iteration=cfg["codec"]["iters"], config_hash=chash)
    with open(os.path.join(out_dir, "codec_loss.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, value in enumerate(history, start=1):
            writer.writerow([i, f"{value:.8f}"])
    return codec


def _write_loss_figure(loss_csv: str, path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    iters, losses = [], []
    with open(loss_csv, "r", newline="") as fh:
        for row in csv.DictReader(fh):
            iters.append(int(row["iteration"]))
            losses.append(float(row["loss"]))
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(iters, losses, lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cmd_train(args) -> int:
    t_start = time.perf_counter()
    cfg = _load_run_config(args)
    chash = cf.config_hash(cfg)
    variant = cfg["variant"]
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.vpck")
    loss_path = os.path.join(args.out, "loss.csv")
    if args.force:
        for name in ("checkpoint.vpck", "codec.vpck", "loss.csv",
                     "codec_loss.csv", "loss.png", "train_manifest.json"):
            p = os.path.join(args.out, name)
            if os.path.exists(p):
                os.unlink(p)

    volumes = _load_dataset(cfg["data_dir"])
    sched = cf.schedule_from_config(cfg)
    net = nets.build_denoiser(cf.denoiser_config_from(cfg), _rng(cfg["seed"], 1))

    start_iter = 0
    if os.path.exists(ckpt_path):
        ckpt = load_checkpoint(ckpt_path)
        if ckpt.config_hash != chash:
            raise cf.ConfigError(
                f"{ckpt_path} belongs to config {ckpt.config_hash[:12]}, "
                f"not {chash[:12]}; use --force to retrain")
        restore_parameters(net, ckpt)
        start_iter = ckpt.iteration

    codec = None
    if variant == "latent3d":
        codec = _train_codec_stage(cfg, args.out, volumes, chash)

    tr = cfg["training"]
    trainer = eng.Trainer(net, sched, lr=tr["lr"], codec=codec,
                          chunk_depth=tr["chunk_depth"],
                          crop=None if tr["crop"] is None else tuple(tr["crop"]))
    if os.path.exists(ckpt_path):
        trainer.checkpoint_path = ckpt_path

    total = tr["iters"]
    if start_iter >= total:
        print(f"checkpoint already at iteration {start_iter}; nothing to do")
        return EXIT_OK

    kinds = cfg["dataset"]["mask_kinds"]
    fraction = tuple(cfg["dataset"]["mask_fraction"])
    mode = "a" if start_iter > 0 and os.path.exists(loss_path) else "w"
    with open(loss_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["iteration", "loss"])
        for it in range(start_iter, total):
            rng = _rng(cfg["seed"], 4, it)
            tasks = []
            for _ in range(tr["batch"]):
                vol = volumes[int(rng.integers(len(volumes)))]
                kind = kinds[int(rng.integers(len(kinds)))]
                mask = gen_mask(MaskSpec(kind=kind, fraction=fraction), vol, rng)
                tasks.append(eng.InpaintTask(vol, mask, variant, sched))
            loss = trainer.train_batch(tasks, rng)
            writer.writerow([it + 1, f"{loss:.8f}"])
            if (it + 1) % CHECKPOINT_EVERY == 0 and (it + 1) < total:
                save_checkpoint(ckpt_path, "denoiser", cfg, net,
                                iteration=it + 1, config_hash=chash)
                trainer.checkpoint_path = ckpt_path
    save_checkpoint(ckpt_path, "denoiser", cfg, net, iteration=total,
                    config_hash=chash)
    _write_loss_figure(loss_path, os.path.join(args.out, "loss.png"))
    _write_json(os.path.join(args.out, "train_manifest.json"), {
        "kind": "training", "variant": variant, "seed": cfg["seed"],
        "iterations": total, "wall_clock": time.perf_counter() - t_start,
        "config_hash": chash, "tool_version": __version__,
        "checkpoint_sha256": _sha256(ckpt_path),
    })
    print(f"trained {variant} to iteration {total}; checkpoint at {ckpt_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample

def _task_indices(tasks_dir: str) -> list:
    if not os.path.isdir(tasks_dir):
        raise CliIOError(f"task directory {tasks_dir} does not exist")
    found = []
    for name in sorted(os.listdir(tasks_dir)):
        match = re.fullmatch(r"phantom_(\d+)\.vvol", name)
        if not match:
            continue
        idx = match.group(1)
        mask_name = f"mask_{idx}.vvol"
        if not os.path.exists(os.path.join(tasks_dir, mask_name)):
            raise CliIOError(f"{tasks_dir}: {name} has no paired {mask_name}")
        found.append(idx)
    if not found:
        raise CliIOError(f"no phantom_*.vvol tasks in {tasks_dir}")
    return found


def cmd_sample(args) -> int:
    ckpt_path = os.path.join(args.run, "checkpoint.vpck")
    if not os.path.exists(ckpt_path):
        raise CliIOError(f"{args.run} has no checkpoint.vpck")
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.kind != "denoiser":
        raise cf.ConfigError(
            f"{ckpt_path} is a {ckpt.kind!r} checkpoint, expected a denoiser")
    cfg = cf.resolve_config(ckpt.config)
    variant = cfg["variant"]
    sched = cf.schedule_from_config(cfg)
    net = nets.build_denoiser(cf.denoiser_config_from(cfg), _rng(cfg["seed"], 1))
    restore_parameters(net, ckpt)

    codec = None
    if variant == "latent3d":
        codec_path = os.path.join(args.run, "codec.vpck")
        if not os.path.exists(codec_path):
            raise cf.ConfigError(
                f"latent3d run {args.run} is missing codec.vpck")
        codec_ckpt = load_checkpoint(codec_path)
        if codec_ckpt.kind != "codec":
            raise cf.ConfigError(f"{codec_path} is not a codec checkpoint")
        codec = VQCodec(CodecConfig(
            latent_channels=cfg["codec"]["latent_channels"],
            factor=cfg["codec"]["factor"],
            codebook_size=cfg["codec"]["codebook_size"],
            base_channels=cfg["codec"]["base_channels"]), _rng(cfg["seed"], 2))
        restore_parameters(codec, codec_ckpt)

    seed = args.seed if args.seed is not None else cfg["seed"]
    indices = _task_indices(args.tasks)
    _prepare_out(args.out, args.force)
    entries = []
    for i, idx in enumerate(indices):
        gt = load_volume(os.path.join(args.tasks, f"phantom_{idx}.vvol"))
        mask = load_volume(os.path.join(args.tasks, f"mask_{idx}.vvol"))
        task = eng.InpaintTask(gt, mask, variant, sched)
        opts = eng.SampleOptions(seed=_sub_seed(seed, 20, i))
        result = eng.sample(net, task, opts, codec=codec)
        result.volume.meta.update({
            "variant": variant, "seed": opts.seed, "T": sched.T,
            "config_hash": ckpt.config_hash, "tool_version": __version__,
            "case": idx,
        })
        name = f"sample_{idx}.vvol"
        path = os.path.join(args.out, name)
        save_volume(result.volume, path)
        entries.append({"file": name, "sha256": _sha256(path),
                        **result.manifest()})
        print(f"sampled case {idx} in {result.wall_clock:.1f}s "
              f"({len(result.chains)} chain(s))")
    _write_json(os.path.join(args.out, "sample_manifest.json"), {
        "kind": "samples", "variant": variant, "seed": seed,
        "config_hash": ckpt.config_hash, "tool_version": __version__,
        "samples": entries,
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def _eval_triples(args) -> list:
    if os.path.isdir(args.pred):
        if not (os.path.isdir(args.truth) and os.path.isdir(args.mask)):
            raise cf.ConfigError(
                "eval: prediction is a directory, so truth and mask must be too")
        triples = []
        for name in sorted(os.listdir(args.pred)):
            match = re.fullmatch(r"sample_(\d+)\.vvol", name)
            if not match:
                continue
            idx = match.group(1)
            triples.append((idx,
                            os.path.join(args.pred, name),
                            os.path.join(args.truth, f"phantom_{idx}.vvol"),
                            os.path.join(args.mask, f"mask_{idx}.vvol")))
        if not triples:
            raise CliIOError(f"no sample_*.vvol files in {args.pred}")
        return triples
    case = os.path.splitext(os.path.basename(args.pred))[0]
    return [(case, args.pred, args.truth, args.mask)]


def cmd_eval(args) -> int:
    triples = _eval_triples(args)
    _prepare_out(args.out, args.force)
    rows = []
    for case, pred_path, truth_path, mask_path in triples:
        for p in (pred_path, truth_path, mask_path):
            if not os.path.exists(p):
                raise CliIOError(f"missing file {p}")
        pred = load_volume(pred_path)
        truth = load_volume(truth_path)
        mask = load_volume(mask_path)
        report = mx.evaluate_masked(pred, truth, mask)
        rows.append({
            "variant": pred.meta.get("variant", "unknown"),
            "case": case,
            "ssim": report.ssim,
            "mse": report.mse,
            "psnr": report.psnr,
            "psnr_infinite": report.psnr_infinite,
            "voxel_count": report.voxel_count,
            "config_hash": pred.meta.get("config_hash", ""),
            "tool_version": __version__,
        })
    csv_path = os.path.join(args.out, "metrics.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    payload = {"cases": [dict(r, psnr=None if r["psnr_infinite"] else r["psnr"])
                         for r in rows]}
    if len(rows) > 1:
        arr = {k: np.array([r[k] for r in rows]) for k in ("ssim", "mse", "psnr")}
        payload["aggregate"] = {
            k: {"mean": float(v.mean()) if np.isfinite(v).all() else None,
                "std": float(v.std(ddof=1)) if np.isfinite(v).all() else None}
            for k, v in arr.items()}
    _write_json(os.path.join(args.out, "metrics.json"), payload)
    print(f"evaluated {len(rows)} case(s); metrics at {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    _prepare_out(args.out, args.force)
    stats = write_report(args.eval_csvs, args.out, allow_mixed=args.allow_mixed)
    print(f"report for {len(stats)} variant(s) written to "
          f"{os.path.join(args.out, 'report.md')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxelpaint",
        description="Diffusion-based inpainting of synthetic 3D volumes")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False):
        if config:
            p.add_argument("--config", required=True, help="run-config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true",
                       help="allow writing into a non-empty output directory")

    p = sub.add_parser("phantom", help="generate a phantom/mask dataset")
    common(p, config=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train a denoiser (resumes if possible)")
    common(p, config=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="inpaint task volumes with a trained run")
    p.add_argument("run", help="training output directory (checkpoint.vpck)")
    p.add_argument("tasks", help="directory of phantom_*/mask_* task pairs")
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("pred", help="sample volume or directory of sample_*.vvol")
    p.add_argument("truth", help="ground-truth volume or directory")
    p.add_argument("mask", help="mask volume or directory")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate eval CSVs into a table")
    p.add_argument("eval_csvs", nargs="+", help="metrics.csv files")
    p.add_argument("--allow-mixed", action="store_true",
                   help="permit mixed config hashes / tool versions")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


CONFIG_ERRORS = (cf.ConfigError, nets.ConfigError, ScheduleError,
                 eng.EngineError, ReportError, PipelineError)
NUMERIC_ERRORS = (eng.TrainingDiverged, CodecDiverged, ad.NumericError)
IO_ERRORS = (VolumeFormatError, CheckpointError, CliIOError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IO_ERRORS as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
