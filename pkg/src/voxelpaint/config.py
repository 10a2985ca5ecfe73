"""Run configuration: strict-schema JSON with per-variant defaults.

Unknown keys are rejected (with their path), every value is type-checked,
and the resolved config hashes to a stable hex digest that all artifacts
carry. Flags override file values at the CLI layer.
"""

from __future__ import annotations

import copy
import hashlib
import json

from .engine import conditioning_channels, state_channels
from .nets import DenoiserConfig, VARIANTS, desk_config
from .schedule import (NoiseSchedule, PREDICTION_TARGETS, SIGMA_MODES,
                       default_schedule, linear_schedule)


class ConfigError(ValueError):
    pass


_2D_VARIANTS = ("2d_slice", "2d_seqpos")

_TRAIN_ITERS = {"2d_slice": 2500, "2d_seqpos": 2500, "pseudo3d": 1500,
                "3d": 1500, "wavelet3d": 1200, "latent3d": 2000}


def default_config(variant: str) -> dict:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    is_2d = variant in _2D_VARIANTS
    net = desk_config(variant, 1, 1)  # channel counts are derived, not stored
    cfg = {
        "variant": variant,
        "seed": 42,
        "data_dir": None,
        "dataset": {
            "count": 16,
            "shape": [16, 32, 32] if is_2d else [32, 32, 32],
            "mask_kinds": ["cuboid", "ellipsoid"],
            "mask_fraction": [0.02, 0.15],
        },
        "schedule": {
            "T": 200,
            "beta_start": None,      # None -> reference endpoints scaled by 1000/T
            "beta_end": None,
            "sigma_mode": "beta",
            "prediction_target": "x0" if variant == "wavelet3d" else "epsilon",
        },
        "denoiser": {
            "base_channels": net.base_channels,
            "channel_mults": list(net.channel_mults),
            "res_blocks_per_scale": net.res_blocks_per_scale,
            "depth_kernel": net.depth_kernel,
            "time_embed_dim": net.time_embed_dim,
        },
        "training": {
            "iters": _TRAIN_ITERS[variant],
            "lr": 3e-4,
            "batch": 1,
            "chunk_depth": 8,                         # pseudo3d slice window
            "crop": None if is_2d else [16, 16, 16],  # 3d training crops
        },
    }
    if variant == "latent3d":
        cfg["codec"] = {
            "latent_channels": 4,
            "factor": 4,
            "codebook_size": 8,
            "base_channels": 16,
            "iters": 1200,
            "lr": 3e-3,
            "crop": 16,
        }
    return cfg


def _check_types(value, template, path: str) -> None:
    if isinstance(template, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        unknown = set(value) - set(template)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        for key, tmpl in template.items():
            if key in value:
                _check_types(value[key], tmpl, f"{path}.{key}")
    elif isinstance(template, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
    elif isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
    elif isinstance(template, int):
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"{path}: expected an integer")
    elif isinstance(template, float):
        if value is not None and not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
    elif isinstance(template, str):
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(user: dict) -> dict:
    """Merge a user config over the variant defaults and validate strictly."""
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    variant = user.get("variant")
    if variant is None:
        raise ConfigError("config.variant is required")
    base = default_config(variant)
    if variant != "latent3d" and "codec" in user:
        raise ConfigError("config.codec is only valid for the latent3d variant")
    _check_types(user, base, "config")
    cfg = _merge(base, user)

    sched = cfg["schedule"]
    if sched["sigma_mode"] not in SIGMA_MODES:
        raise ConfigError(f"config.schedule.sigma_mode must be one of {SIGMA_MODES}")
    if sched["prediction_target"] not in PREDICTION_TARGETS:
        raise ConfigError(
            f"config.schedule.prediction_target must be one of {PREDICTION_TARGETS}")
    if (sched["beta_start"] is None) != (sched["beta_end"] is None):
        raise ConfigError("config.schedule: set both beta endpoints or neither")
    if sched["T"] < 1:
        raise ConfigError("config.schedule.T must be >= 1")
    ds = cfg["dataset"]
    if len(ds["shape"]) != 3 or min(ds["shape"]) < 1:
        raise ConfigError("config.dataset.shape must be three positive extents")
    for kind in ds["mask_kinds"]:
        if kind not in ("cuboid", "ellipsoid"):
            raise ConfigError(f"config.dataset.mask_kinds: unknown kind {kind!r}")
    lo, hi = ds["mask_fraction"]
    if not (0.0 < lo <= hi < 1.0):
        raise ConfigError("config.dataset.mask_fraction must satisfy 0 < lo <= hi < 1")
    tr = cfg["training"]
    if tr["iters"] < 1 or tr["batch"] < 1:
        raise ConfigError("config.training.iters and batch must be positive")
    if tr["crop"] is not None and len(tr["crop"]) != 3:
        raise ConfigError("config.training.crop must be three extents or null")
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return resolve_config(user)


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def schedule_from_config(cfg: dict) -> NoiseSchedule:
    s = cfg["schedule"]
    if s["beta_start"] is None:
        return default_schedule(s["T"], s["sigma_mode"], s["prediction_target"])
    return linear_schedule(s["T"], s["beta_start"], s["beta_end"],
                           s["sigma_mode"], s["prediction_target"])


def denoiser_config_from(cfg: dict) -> DenoiserConfig:
    variant = cfg["variant"]
    d = cfg.get("codec", {}).get("latent_channels", 4)
    net = cfg["denoiser"]
    return DenoiserConfig(
        variant=variant,
        in_channels=conditioning_channels(variant, d),
        out_channels=state_channels(variant, d),
        base_channels=net["base_channels"],
        channel_mults=tuple(net["channel_mults"]),
        res_blocks_per_scale=net["res_blocks_per_scale"],
        depth_kernel=net["depth_kernel"],
        time_embed_dim=net["time_embed_dim"],
    )
