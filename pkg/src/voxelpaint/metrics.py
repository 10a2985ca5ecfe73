"""Masked-region image-quality metrics: MSE, PSNR, SSIM, and Dice.

Masked SSIM averages the SSIM map over sites whose center voxel is masked
(not a masked mean of a globally averaged map); a map site depends only on
voxels within its Gaussian window, so edits outside the window-dilated mask
cannot change the score.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    ssim: float
    mse: float
    psnr: float          # math.inf when mse == 0
    voxel_count: int

    @property
    def psnr_infinite(self) -> bool:
        return math.isinf(self.psnr)

    def to_dict(self) -> dict:
        return {
            "ssim": self.ssim,
            "mse": self.mse,
            "psnr": None if self.psnr_infinite else self.psnr,
            "psnr_infinite": self.psnr_infinite,
            "voxel_count": self.voxel_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _data(x) -> np.ndarray:
    arr = x.data if hasattr(x, "data") else x
    return np.asarray(arr, dtype=np.float64)


def _mask(m) -> np.ndarray:
    arr = _data(m)
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise MetricError(f"mask must be binary, found values {vals[:5]}")
    return arr > 0.5


def _check_pair(a: np.ndarray, b: np.ndarray, m: np.ndarray) -> None:
    if a.shape != b.shape or a.shape != m.shape:
        raise MetricError(f"shape mismatch: {a.shape}, {b.shape}, {m.shape}")
    if not m.any():
        raise MetricError("mask selects no voxels")


def mse_masked(a, b, m) -> float:
    a, b, mm = _data(a), _data(b), _mask(m)
    _check_pair(a, b, mm)
    diff = a[mm] - b[mm]
    return float(np.mean(diff * diff))


def psnr_masked(a, b, m, data_range: float = 1.0) -> float:
    err = mse_masked(a, b, m)
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(data_range * data_range / err))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def _filter_axis(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Correlate one axis with symmetric-reflect boundary handling."""
    r = len(kernel) // 2
    moved = np.moveaxis(x, axis, -1)
    padded = np.pad(moved, [(0, 0)] * (x.ndim - 1) + [(r, r)], mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=-1)
    return np.moveaxis(windows @ kernel, -1, axis)


def _local_mean(x: np.ndarray, kernel: np.ndarray, axes) -> np.ndarray:
    out = x
    for ax in axes:
        out = _filter_axis(out, kernel, ax)
    return out


def ssim_masked(a, b, m, window: int = 11, sigma: float = 1.5,
                k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0,
                mode: str = "3d") -> float:
    """Gaussian-weighted SSIM averaged over mask-centered window sites.

    ``mode`` selects 3D windows (default) or per-slice 2D windows over the
    trailing two axes. The window shrinks (staying odd) to fit small volumes.
    """
    a, b, mm = _data(a), _data(b), _mask(m)
    _check_pair(a, b, mm)
    if mode not in ("3d", "2d"):
        raise MetricError(f"unknown ssim mode {mode!r}")
    axes = (0, 1, 2) if mode == "3d" else (1, 2)

    w = min([window] + [a.shape[ax] for ax in axes])
    if w % 2 == 0:
        w -= 1
    if w < 1:
        raise MetricError("volume too small for any ssim window")
    kernel = _gaussian_kernel(w, sigma)

    mu_a = _local_mean(a, kernel, axes)
    mu_b = _local_mean(b, kernel, axes)
    var_a = _local_mean(a * a, kernel, axes) - mu_a * mu_a
    var_b = _local_mean(b * b, kernel, axes) - mu_b * mu_b
    cov = _local_mean(a * b, kernel, axes) - mu_a * mu_b

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    ssim_map = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)))
    return float(np.mean(ssim_map[mm]))


def dice(x, y) -> float:
    """Overlap of two binary volumes; defined as 1.0 when both are empty."""
    xm, ym = _mask(x), _mask(y)
    if xm.shape != ym.shape:
        raise MetricError(f"shape mismatch: {xm.shape} vs {ym.shape}")
    nx, ny = int(xm.sum()), int(ym.sum())
    if nx + ny == 0:
        return 1.0
    return 2.0 * float(np.logical_and(xm, ym).sum()) / (nx + ny)


def evaluate_masked(prediction, truth, mask, data_range: float = 1.0) -> MetricReport:
    """Bundle the three masked scores into one report."""
    err = mse_masked(prediction, truth, mask)
    return MetricReport(
        ssim=ssim_masked(prediction, truth, mask, data_range=data_range),
        mse=err,
        psnr=math.inf if err == 0.0 else float(10.0 * np.log10(data_range ** 2 / err)),
        voxel_count=int(_mask(mask).sum()),
    )
