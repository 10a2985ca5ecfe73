"""Time-conditioned UNet denoisers for the six inpainting variants.

One UNet skeleton is specialized by a space-ops strategy:

  * 2d_slice / 2d_seqpos  -- [C,H,W] tensors, plain 2D convs
  * pseudo3d              -- [C,D,H,W]; every spatial conv is a per-slice 2D
                             conv followed by a 1D depth conv, and norms,
                             pooling and upsampling act per slice, so with
                             identity depth kernels the network is exactly
                             the 2D one applied slice by slice
  * 3d / latent3d / wavelet3d -- [C,D,H,W], full 3D convs

Skeleton: stem conv -> per-scale residual blocks with avg-pool downsampling
-> one bottleneck block -> mirrored decoder with nearest-upsample + conv and
skip concatenation -> group-norm / SiLU / zero-initialized projection.
Time (and slice-position) conditioning enters every residual block as a
learned per-channel shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

VARIANTS = ("2d_slice", "2d_seqpos", "pseudo3d", "3d", "latent3d", "wavelet3d")
VOLUMETRIC_VARIANTS = ("pseudo3d", "3d", "latent3d", "wavelet3d")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    variant: str
    in_channels: int
    out_channels: int
    base_channels: int = 32
    channel_mults: tuple = (1, 2, 4)
    res_blocks_per_scale: int = 2
    depth_kernel: int = 3
    time_embed_dim: int = 64
    final_zero_init: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.res_blocks_per_scale < 1:
            raise ConfigError("res_blocks_per_scale must be >= 1")
        if self.depth_kernel % 2 != 1:
            raise ConfigError("depth_kernel must be odd")
        if min(self.in_channels, self.out_channels, self.base_channels) < 1:
            raise ConfigError("channel counts must be positive")
        if not self.channel_mults:
            raise ConfigError("channel_mults must be non-empty")
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "base_channels": self.base_channels,
            "channel_mults": list(self.channel_mults),
            "res_blocks_per_scale": self.res_blocks_per_scale,
            "depth_kernel": self.depth_kernel,
            "time_embed_dim": self.time_embed_dim,
            "final_zero_init": self.final_zero_init,
        }

    @staticmethod
    def from_dict(d: dict) -> "DenoiserConfig":
        return DenoiserConfig(**{**d, "channel_mults": tuple(d["channel_mults"])})


def sinusoidal_embedding(index: int, dim: int) -> np.ndarray:
    """Deterministic sin/cos features of an integer index."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = float(index) * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)])
    if dim % 2:
        emb = np.append(emb, 0.0)
    return emb


def _kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(ad.Module):
    def __init__(self, rng, in_dim: int, out_dim: int):
        self.w = ad.Parameter(_kaiming_uniform(rng, (out_dim, in_dim), in_dim))
        self.b = ad.Parameter(np.zeros(out_dim))

    def forward(self, x):
        return ad.linear(x, self.w, self.b)


class GroupNorm(ad.Module):
    def __init__(self, channels: int, exclude_axes: tuple = ()):
        self.groups = min(8, channels)
        self.exclude_axes = exclude_axes
        self.gamma = ad.Parameter(np.ones(channels))
        self.beta = ad.Parameter(np.zeros(channels))

    def forward(self, x):
        return ad.group_norm(x, self.groups, self.gamma, self.beta,
                             exclude_axes=self.exclude_axes)


class Conv2D(ad.Module):
    """2D conv applied to [C,H,W], or per depth slice of [C,D,H,W]."""

    def __init__(self, rng, cin: int, cout: int, k: int = 3,
                 stack: bool = False, zero_init: bool = False):
        shape = (cout, cin, k, k)
        self.stack = stack
        if zero_init:
            self.w = ad.Parameter(np.zeros(shape))
        else:
            self.w = ad.Parameter(_kaiming_uniform(rng, shape, cin * k * k))
        self.b = ad.Parameter(np.zeros(cout))

    def forward(self, x):
        op = ad.conv2d_stack if self.stack else ad.conv2d
        return op(x, self.w, self.b)


class Conv3D(ad.Module):
    def __init__(self, rng, cin: int, cout: int, k: int = 3, zero_init: bool = False):
        shape = (cout, cin, k, k, k)
        if zero_init:
            self.w = ad.Parameter(np.zeros(shape))
        else:
            self.w = ad.Parameter(_kaiming_uniform(rng, shape, cin * k ** 3))
        self.b = ad.Parameter(np.zeros(cout))

    def forward(self, x):
        return ad.conv3d(x, self.w, self.b)


class DepthConv(ad.Module):
    """Channel-mixing 1D conv along the depth axis (no bias)."""

    def __init__(self, rng, channels: int, k: int):
        self.w = ad.Parameter(_kaiming_uniform(rng, (channels, channels, k),
                                               channels * k))

    def forward(self, x):
        return ad.conv_axis1d(x, self.w, axis=1)

    def set_identity(self):
        w = np.zeros_like(self.w.data)
        c, _, k = w.shape
        w[np.arange(c), np.arange(c), k // 2] = 1.0
        self.w.data[...] = w


class PseudoConv(ad.Module):
    """Per-slice 2D conv followed by a depth conv; the factorized 3D unit."""

    def __init__(self, rng, cin: int, cout: int, k: int = 3,
                 depth_kernel: int = 3, zero_init: bool = False):
        self.spatial = Conv2D(rng, cin, cout, k, stack=True, zero_init=zero_init)
        self.depth = DepthConv(rng, cout, depth_kernel)

    def forward(self, x):
        return self.depth(self.spatial(x))


class _Ops2D:
    """[C,H,W] semantics."""

    gn_exclude = ()
    pool_axes = None  # every non-channel axis

    def __init__(self, config):
        pass

    def conv(self, rng, cin, cout, zero_init=False):
        return Conv2D(rng, cin, cout, 3, zero_init=zero_init)

    def pointwise(self, rng, cin, cout):
        return Conv2D(rng, cin, cout, 1)


class _OpsPseudo3D:
    """[C,D,H,W] with strictly slice-wise 2D behaviour plus depth mixing."""

    gn_exclude = (1,)
    pool_axes = (2, 3)

    def __init__(self, config):
        self.depth_kernel = config.depth_kernel

    def conv(self, rng, cin, cout, zero_init=False):
        return PseudoConv(rng, cin, cout, 3, self.depth_kernel, zero_init=zero_init)

    def pointwise(self, rng, cin, cout):
        return Conv2D(rng, cin, cout, 1, stack=True)


class _Ops3D:
    """[C,D,H,W] with full 3D mixing."""

    gn_exclude = ()
    pool_axes = None

    def __init__(self, config):
        pass

    def conv(self, rng, cin, cout, zero_init=False):
        return Conv3D(rng, cin, cout, 3, zero_init=zero_init)

    def pointwise(self, rng, cin, cout):
        return Conv3D(rng, cin, cout, 1)


_OPS = {
    "2d_slice": _Ops2D,
    "2d_seqpos": _Ops2D,
    "pseudo3d": _OpsPseudo3D,
    "3d": _Ops3D,
    "latent3d": _Ops3D,
    "wavelet3d": _Ops3D,
}


class ResBlock(ad.Module):
    def __init__(self, rng, ops, cin: int, cout: int, emb_dim: int):
        self.norm1 = GroupNorm(cin, ops.gn_exclude)
        self.conv1 = ops.conv(rng, cin, cout)
        self.emb_proj = Linear(rng, emb_dim, cout)
        self.norm2 = GroupNorm(cout, ops.gn_exclude)
        self.conv2 = ops.conv(rng, cout, cout)
        self.skip = ops.pointwise(rng, cin, cout) if cin != cout else None

    def forward(self, x, emb):
        h = self.conv1(ad.silu(self.norm1(x)))
        h = ad.add_channel_bias(h, self.emb_proj(emb))
        h = self.conv2(ad.silu(self.norm2(h)))
        return ad.add(h, x if self.skip is None else self.skip(x))


class TimeEmbedding(ad.Module):
    """Sinusoidal features of the step index through a two-layer perceptron."""

    def __init__(self, rng, dim: int):
        self.dim = dim
        self.fc1 = Linear(rng, dim, dim)
        self.fc2 = Linear(rng, dim, dim)

    def forward(self, features: np.ndarray):
        return self.fc2(ad.silu(self.fc1(ad.Tensor(features))))


class UNetDenoiser(ad.Module):
    def __init__(self, config: DenoiserConfig, rng: np.random.Generator):
        self.config = config
        ops = _OPS[config.variant](config)
        self._ops = ops
        widths = [config.base_channels * m for m in config.channel_mults]
        emb_dim = config.time_embed_dim
        rb = config.res_blocks_per_scale

        self.time_embed = TimeEmbedding(rng, emb_dim)
        self.stem = ops.conv(rng, config.in_channels, config.base_channels)

        self.enc = []
        prev = config.base_channels
        for w in widths:
            blocks = []
            for _ in range(rb):
                blocks.append(ResBlock(rng, ops, prev, w, emb_dim))
                prev = w
            self.enc.append(blocks)

        self.mid = ResBlock(rng, ops, prev, prev, emb_dim)

        self.up_convs = []
        self.dec = []
        for i in reversed(range(len(widths))):
            w = widths[i]
            if i < len(widths) - 1:
                self.up_convs.append(ops.conv(rng, widths[i + 1], w))
            blocks = []
            cin = 2 * w
            for _ in range(rb):
                blocks.append(ResBlock(rng, ops, cin, w, emb_dim))
                cin = w
            self.dec.append(blocks)

        self.head_norm = GroupNorm(widths[0], ops.gn_exclude)
        self.head = ops.conv(rng, widths[0], config.out_channels,
                             zero_init=config.final_zero_init)

    @property
    def variant(self) -> str:
        return self.config.variant

    def _embedding(self, t: int, slice_pos) -> ad.Tensor:
        feats = sinusoidal_embedding(t, self.config.time_embed_dim)
        if self.config.variant == "2d_seqpos":
            feats = feats + sinusoidal_embedding(slice_pos, self.config.time_embed_dim)
        return self.time_embed(feats)

    def forward(self, x, t: int, slice_pos=None):
        x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        expected_ndim = 3 if self.config.variant in ("2d_slice", "2d_seqpos") else 4
        if x.ndim != expected_ndim:
            raise ad.ShapeError(
                f"{self.config.variant}: expected {expected_ndim}-axis input, "
                f"got {x.ndim} axes")
        if x.shape[0] != self.config.in_channels:
            raise ad.ShapeError(
                f"{self.config.variant}: channel axis {x.shape[0]} != configured "
                f"in_channels {self.config.in_channels}")
        if self.config.variant == "2d_seqpos" and slice_pos is None:
            raise ad.ShapeError("2d_seqpos requires slice_pos")

        emb = self._embedding(t, slice_pos)
        pool_axes = self._ops.pool_axes

        h = self.stem(x)
        skips = []
        n_scales = len(self.enc)
        for i, blocks in enumerate(self.enc):
            for block in blocks:
                h = block(h, emb)
            skips.append(h)
            if i < n_scales - 1:
                h = ad.avg_pool(h, 2, axes=pool_axes)

        h = self.mid(h, emb)

        for j, blocks in enumerate(self.dec):
            i = n_scales - 1 - j
            if j > 0:
                h = ad.nearest_upsample(h, 2, axes=pool_axes)
                h = self.up_convs[j - 1](h)
            h = ad.concat_channels([h, skips[i]])
            for block in blocks:
                h = block(h, emb)

        return self.head(ad.silu(self.head_norm(h)))


def build_denoiser(config: DenoiserConfig, rng: np.random.Generator) -> UNetDenoiser:
    return UNetDenoiser(config, rng)


def desk_config(variant: str, in_channels: int, out_channels: int) -> DenoiserConfig:
    """Desk-scale capacity defaults, sized so a six-variant comparison stays
    within a one-hour CPU budget while keeping full-3D base channels lowest.
    """
    if variant in ("2d_slice", "2d_seqpos"):
        return DenoiserConfig(variant, in_channels, out_channels,
                              base_channels=16, channel_mults=(1, 2),
                              res_blocks_per_scale=2)
    if variant == "pseudo3d":
        return DenoiserConfig(variant, in_channels, out_channels,
                              base_channels=8, channel_mults=(1, 2, 4),
                              res_blocks_per_scale=2, depth_kernel=3)
    if variant == "3d":
        return DenoiserConfig(variant, in_channels, out_channels,
                              base_channels=8, channel_mults=(1, 2),
                              res_blocks_per_scale=2)
    return DenoiserConfig(variant, in_channels, out_channels,
                          base_channels=16, channel_mults=(1, 2),
                          res_blocks_per_scale=2)
