"""Single-level orthonormal 3D Haar transform with channel packing.

Subband order is LLL, LLH, LHL, LHH, HLL, HLH, HHL, HHH, with the three
letters naming the band along depth, height and width respectively. The
1/sqrt(2) filters make the transform energy-preserving, so diffusion noise
has the same scale in every subband.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SQRT2 = np.sqrt(2.0)

SUBBAND_NAMES = ("LLL", "LLH", "LHL", "LHH", "HLL", "HLH", "HHL", "HHH")


class WaveletError(ValueError):
    pass


@dataclass(frozen=True)
class WaveletCoeffs:
    """The 8 half-resolution subbands of one volume, stacked on axis 0."""

    subbands: np.ndarray

    def __post_init__(self):
        if self.subbands.ndim != 4 or self.subbands.shape[0] != 8:
            raise WaveletError(
                f"expected [8, D/2, H/2, W/2] subbands, got {self.subbands.shape}")

    def band(self, name: str) -> np.ndarray:
        return self.subbands[SUBBAND_NAMES.index(name)]


def _split_axis(x: np.ndarray, axis: int):
    even = tuple(slice(0, None, 2) if a == axis else slice(None) for a in range(x.ndim))
    odd = tuple(slice(1, None, 2) if a == axis else slice(None) for a in range(x.ndim))
    lo = (x[even] + x[odd]) / _SQRT2
    hi = (x[even] - x[odd]) / _SQRT2
    return lo, hi


def _merge_axis(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.float64)
    even = tuple(slice(0, None, 2) if a == axis else slice(None) for a in range(out.ndim))
    odd = tuple(slice(1, None, 2) if a == axis else slice(None) for a in range(out.ndim))
    out[even] = (lo + hi) / _SQRT2
    out[odd] = (lo - hi) / _SQRT2
    return out


def dwt3(volume: np.ndarray) -> WaveletCoeffs:
    """Separable Haar analysis of a [1,D,H,W] (or [D,H,W]) volume."""
    v = np.asarray(volume, dtype=np.float64)
    if v.ndim == 4:
        if v.shape[0] != 1:
            raise WaveletError(f"expected a single-channel volume, got {v.shape}")
        v = v[0]
    if v.ndim != 3:
        raise WaveletError(f"expected a 3-axis volume, got {v.ndim} axes")
    for a, e in enumerate(v.shape):
        if e % 2 != 0:
            raise WaveletError(f"axis {a} extent {e} is odd; crop/pad to even first")

    l, h = _split_axis(v, 0)
    ll, lh = _split_axis(l, 1)
    hl, hh = _split_axis(h, 1)
    bands = []
    for part in (ll, lh, hl, hh):
        lo, hi = _split_axis(part, 2)
        bands.extend([lo, hi])
    return WaveletCoeffs(np.stack(bands, axis=0))


def idwt3(coeffs: WaveletCoeffs) -> np.ndarray:
    """Exact inverse of dwt3; returns a [1,D,H,W] volume."""
    s = coeffs.subbands
    parts = [_merge_axis(s[i], s[i + 1], 2) for i in range(0, 8, 2)]
    l = _merge_axis(parts[0], parts[1], 1)
    h = _merge_axis(parts[2], parts[3], 1)
    return _merge_axis(l, h, 0)[None]


def pack_channels(coeffs_list) -> np.ndarray:
    """Concatenate several coefficient sets along the channel axis."""
    if not coeffs_list:
        raise WaveletError("nothing to pack")
    shapes = {c.subbands.shape for c in coeffs_list}
    if len(shapes) != 1:
        raise WaveletError(f"inconsistent subband shapes: {sorted(shapes)}")
    return np.concatenate([c.subbands for c in coeffs_list], axis=0)


def unpack_channels(t: np.ndarray) -> list[WaveletCoeffs]:
    t = np.asarray(t)
    if t.ndim != 4 or t.shape[0] % 8 != 0:
        raise WaveletError(
            f"channel count {t.shape[0] if t.ndim == 4 else '?'} is not a multiple of 8")
    return [WaveletCoeffs(t[i:i + 8].copy()) for i in range(0, t.shape[0], 8)]
