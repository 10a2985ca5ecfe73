"""Volume container, .vvol container I/O, preprocessing, and synthetic data.

The .vvol layout: magic "VVOL", u8 version (=1), u8 dtype (0 = f32 LE),
three u32 extents (D, H, W), a u32 byte length followed by UTF-8 JSON
metadata, then exactly 4*D*H*W bytes of voxel payload. All integers are
little-endian.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"VVOL"
FORMAT_VERSION = 1
DTYPE_F32 = 0


class VolumeFormatError(IOError):
    """Malformed header, truncated payload, or version mismatch."""


class PipelineError(ValueError):
    """Preprocessing or generation precondition violated."""


@dataclass
class Volume:
    """A 3D scalar field (f32 voxels) with a free-form metadata header."""

    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise PipelineError(f"volume shape must be 3-axis, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise PipelineError("volume contains non-finite voxels")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def as_f64(self) -> np.ndarray:
        return self.data.astype(np.float64)


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write-temp-then-rename so readers never observe a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_volume(v: Volume, path: str) -> None:
    d, h, w = v.shape
    header = json.dumps(v.meta, sort_keys=True).encode("utf-8")
    blob = b"".join([
        MAGIC,
        struct.pack("<BB", FORMAT_VERSION, DTYPE_F32),
        struct.pack("<III", d, h, w),
        struct.pack("<I", len(header)),
        header,
        np.ascontiguousarray(v.data, dtype="<f4").tobytes(),
    ])
    atomic_write_bytes(path, blob)


def load_volume(path: str) -> Volume:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 + 2 + 12 + 4:
        raise VolumeFormatError(f"{path}: file too short for a .vvol header")
    if raw[:4] != MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype = struct.unpack_from("<BB", raw, 4)
    if version != FORMAT_VERSION:
        raise VolumeFormatError(f"{path}: unsupported format version {version}")
    if dtype != DTYPE_F32:
        raise VolumeFormatError(f"{path}: unsupported dtype code {dtype}")
    d, h, w = struct.unpack_from("<III", raw, 6)
    (hdr_len,) = struct.unpack_from("<I", raw, 18)
    hdr_end = 22 + hdr_len
    payload_len = 4 * d * h * w
    if len(raw) != hdr_end + payload_len:
        raise VolumeFormatError(
            f"{path}: expected {hdr_end + payload_len} bytes, found {len(raw)}")
    try:
        meta = json.loads(raw[22:hdr_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VolumeFormatError(f"{path}: malformed metadata header: {exc}") from exc
    data = np.frombuffer(raw[hdr_end:], dtype="<f4").reshape(d, h, w)
    return Volume(data.copy(), meta)


# ---------------------------------------------------------------------------
# Preprocessing

def percentile_clip(v: Volume, low: float = 0.001, high: float = 0.999) -> Volume:
    """Clamp voxels outside the [low, high] quantiles (linear interpolation).

    Re-clipping is stable to within a fraction of one order-statistic gap
    at the tails; it is exactly idempotent when the bounds land on data
    values.
    """
    data = v.as_f64()
    lo = np.quantile(data, low)
    hi = np.quantile(data, high)
    return Volume(np.clip(data, lo, hi), dict(v.meta))


def normalize_01(v: Volume) -> Volume:
    data = v.as_f64()
    lo, hi = data.min(), data.max()
    if hi <= lo:
        raise PipelineError("cannot normalize a constant volume (degenerate range)")
    return Volume((data - lo) / (hi - lo), dict(v.meta))


def normalize_pm1(v: Volume) -> Volume:
    data = v.as_f64()
    lo, hi = data.min(), data.max()
    if hi <= lo:
        raise PipelineError("cannot normalize a constant volume (degenerate range)")
    return Volume(2.0 * (data - lo) / (hi - lo) - 1.0, dict(v.meta))


def crop_pad(v: Volume, target: tuple) -> Volume:
    """Center-crop axes that are too large, zero-pad axes that are too small.

    Odd differences put the extra voxel on the high side of the axis.
    """
    if len(target) != 3 or min(target) < 1:
        raise PipelineError(f"bad crop_pad target {target}")
    data = v.data
    for ax in range(3):
        cur, tgt = data.shape[ax], target[ax]
        if cur > tgt:
            start = (cur - tgt) // 2
            sel = [slice(None)] * 3
            sel[ax] = slice(start, start + tgt)
            data = data[tuple(sel)]
        elif cur < tgt:
            lo = (tgt - cur) // 2
            pad = [(0, 0)] * 3
            pad[ax] = (lo, tgt - cur - lo)
            data = np.pad(data, pad)
    return Volume(data.copy(), dict(v.meta))


def avg_downsample(v: Volume, factor: int) -> Volume:
    data = v.as_f64()
    for ax, e in enumerate(data.shape):
        if e % factor != 0:
            raise PipelineError(
                f"axis {ax} extent {e} not divisible by pooling factor {factor}")
    d, h, w = data.shape
    f = factor
    pooled = data.reshape(d // f, f, h // f, f, w // f, f).mean(axis=(1, 3, 5))
    return Volume(pooled, dict(v.meta))


# ---------------------------------------------------------------------------
# Synthetic phantoms and masks

@dataclass
class PhantomSpec:
    """Generator knobs for a blobby field inside an ellipsoid support."""

    seed: int
    shape: tuple = (32, 32, 32)
    support_axes: tuple = (0.38, 0.48)   # semi-axis range, fraction of half-extent
    blob_count: tuple = (4, 9)
    blob_intensity: tuple = (0.3, 1.0)
    smoothness: float = 1.0
    floor: float = 0.15                  # darkest foreground intensity


@dataclass
class MaskSpec:
    """One mask draw: shape kind plus either explicit geometry or bounds."""

    kind: str = "ellipsoid"              # "cuboid" | "ellipsoid"
    fraction: tuple = (0.02, 0.15)       # bounds on mask / foreground volume
    center: tuple | None = None          # voxel coords; drawn when None
    radii: tuple | None = None           # per-axis half extents; drawn when None

    def __post_init__(self):
        if self.kind not in ("cuboid", "ellipsoid"):
            raise PipelineError(f"unknown mask kind {self.kind!r}")


def _axis_grids(shape):
    return np.meshgrid(*[np.arange(e, dtype=np.float64) for e in shape],
                       indexing="ij")


def gen_phantom(spec: PhantomSpec) -> Volume:
    """Smooth blobby field inside an ellipsoid support, zero background."""
    rng = np.random.default_rng(spec.seed)
    shape = tuple(spec.shape)
    half = np.array([(e - 1) / 2.0 for e in shape])
    center = half + rng.uniform(-0.05, 0.05, size=3) * np.array(shape)
    semi = rng.uniform(*spec.support_axes, size=3) * np.array(shape)

    zz, yy, xx = _axis_grids(shape)
    coords = np.stack([zz, yy, xx])
    rel = (coords - center[:, None, None, None]) / semi[:, None, None, None]
    support = (rel ** 2).sum(axis=0) <= 1.0
    if not support.any():
        raise PipelineError("phantom support is empty")

    n_blobs = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    field = np.zeros(shape)
    for _ in range(n_blobs):
        bc = center + rng.uniform(-0.7, 0.7, size=3) * semi
        sigma = rng.uniform(0.10, 0.28, size=3) * np.array(shape) * spec.smoothness
        amp = rng.uniform(*spec.blob_intensity)
        rho2 = (((coords - bc[:, None, None, None])
                 / sigma[:, None, None, None]) ** 2).sum(axis=0)
        field += amp * np.exp(-0.5 * rho2)

    fg = field[support]
    lo, hi = fg.min(), fg.max()
    if hi <= lo:
        raise PipelineError("degenerate phantom field")
    data = np.zeros(shape)
    data[support] = spec.floor + (1.0 - spec.floor) * (field[support] - lo) / (hi - lo)
    meta = {"kind": "phantom", "seed": int(spec.seed), "shape": list(shape)}
    return Volume(data, meta)


def _mask_candidate(kind, center, radii, shape):
    zz, yy, xx = _axis_grids(shape)
    coords = np.stack([zz, yy, xx])
    rel = coords - np.asarray(center, dtype=np.float64)[:, None, None, None]
    radii = np.asarray(radii, dtype=np.float64)
    if kind == "ellipsoid":
        return ((rel / radii[:, None, None, None]) ** 2).sum(axis=0) <= 1.0
    return np.all(np.abs(rel) <= radii[:, None, None, None], axis=0)


def gen_mask(spec: MaskSpec, phantom: Volume, rng: np.random.Generator) -> Volume:
    """Binary mask fully inside the phantom foreground, fraction within bounds."""
    fg = phantom.data > 0.0
    n_fg = int(fg.sum())
    if n_fg == 0:
        raise PipelineError("phantom has no foreground to mask")
    fg_idx = np.argwhere(fg)
    lo, hi = spec.fraction

    explicit = spec.center is not None and spec.radii is not None
    attempts = 1 if explicit else 100
    for _ in range(attempts):
        if explicit:
            center, radii = spec.center, spec.radii
        else:
            target = rng.uniform(lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo))
            want = target * n_fg
            ratios = rng.uniform(0.7, 1.4, size=3)
            ratios /= ratios.prod() ** (1.0 / 3.0)
            if spec.kind == "ellipsoid":
                base = (want * 3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
            else:
                base = 0.5 * want ** (1.0 / 3.0)
            radii = np.maximum(base * ratios, 1.0)
            center = fg_idx[rng.integers(n_fg)]
        mask = _mask_candidate(spec.kind, center, radii, phantom.shape) & fg
        frac = mask.sum() / n_fg
        if lo <= frac <= hi:
            meta = {"kind": "mask", "mask_kind": spec.kind,
                    "fraction": float(frac)}
            return Volume(mask.astype(np.float32), meta)
    raise PipelineError(
        f"could not draw a {spec.kind} mask within fraction {spec.fraction} "
        f"after {attempts} attempts")
