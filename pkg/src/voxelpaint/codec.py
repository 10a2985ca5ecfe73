"""Tiny vector-quantized convolutional autoencoder for the latent variant.

Strided-conv encoder (conv + factor-2 subsampling per stage), nearest-entry
codebook with straight-through gradients, and an upsampling conv decoder.
Losses: reconstruction MSE + codebook pull + 0.25 * commitment. No
adversarial or perceptual terms; the diffusion interface only needs a
working latent space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nets import ConfigError, _kaiming_uniform


@dataclass(frozen=True)
class CodecConfig:
    latent_channels: int = 4
    factor: int = 4
    codebook_size: int = 8
    base_channels: int = 8

    def __post_init__(self):
        f = self.factor
        if f < 2 or (f & (f - 1)) != 0:
            raise ConfigError(f"downsample factor must be a power of two, got {f}")
        if min(self.latent_channels, self.codebook_size, self.base_channels) < 1:
            raise ConfigError("codec channel counts must be positive")

    @property
    def stages(self) -> int:
        return int(np.log2(self.factor))

    def to_dict(self) -> dict:
        return {"latent_channels": self.latent_channels, "factor": self.factor,
                "codebook_size": self.codebook_size,
                "base_channels": self.base_channels}

    @staticmethod
    def from_dict(d: dict) -> "CodecConfig":
        return CodecConfig(**d)


@dataclass(frozen=True)
class LatentCode:
    """Quantized latent grid plus the codebook indices that produced it."""

    quantized: np.ndarray   # [d, D', H', W']
    indices: np.ndarray     # [D', H', W'] integer grid


class _Conv3(ad.Module):
    def __init__(self, rng, cin, cout, k=3):
        self.w = ad.Parameter(_kaiming_uniform(rng, (cout, cin, k, k, k),
                                               cin * k ** 3))
        self.b = ad.Parameter(np.zeros(cout))

    def forward(self, x):
        return ad.conv3d(x, self.w, self.b)


class VQCodec(ad.Module):
    def __init__(self, config: CodecConfig, rng: np.random.Generator):
        self.config = config
        b, d = config.base_channels, config.latent_channels
        self.enc_in = _Conv3(rng, 1, b)
        self.enc_stages = [_Conv3(rng, b, b) for _ in range(config.stages)]
        self.enc_out = _Conv3(rng, b, d)
        self.dec_in = _Conv3(rng, d, b)
        self.dec_stages = [_Conv3(rng, b, b) for _ in range(config.stages)]
        self.dec_refine = _Conv3(rng, b, b)
        self.dec_out = _Conv3(rng, b, 1)
        self.codebook = ad.Parameter(
            rng.normal(0.0, 0.1, size=(config.codebook_size, d)))
        self._codebook_seeded = False

    # -- differentiable cores (Tensor in/out) -------------------------------

    def encode_t(self, x: ad.Tensor) -> ad.Tensor:
        h = ad.silu(self.enc_in(x))
        for stage in self.enc_stages:
            h = ad.silu(ad.subsample(stage(h), 2))
        return self.enc_out(h)

    def decode_t(self, z: ad.Tensor) -> ad.Tensor:
        h = ad.silu(self.dec_in(z))
        for stage in self.dec_stages:
            h = ad.silu(stage(ad.nearest_upsample(h, 2)))
        h = ad.silu(self.dec_refine(h))
        return self.dec_out(h)

    # -- numpy front doors ---------------------------------------------------

    def _check_input(self, volume: np.ndarray) -> np.ndarray:
        v = np.asarray(volume, dtype=np.float64)
        if v.ndim != 4 or v.shape[0] != 1:
            raise ad.ShapeError(f"codec expects [1,D,H,W] volumes, got {v.shape}")
        for ax, e in enumerate(v.shape[1:], start=1):
            if e % self.config.factor != 0:
                raise ad.ShapeError(
                    f"axis {ax} extent {e} not divisible by factor {self.config.factor}")
        return v

    def encode(self, volume: np.ndarray) -> np.ndarray:
        """Continuous (pre-quantization) latents of a [1,D,H,W] volume."""
        return self.encode_t(ad.Tensor(self._check_input(volume))).data

    def quantize(self, z: np.ndarray) -> LatentCode:
        """Snap each spatial site to its nearest codebook entry (lowest index
        wins ties)."""
        z = np.asarray(z, dtype=np.float64)
        d = self.config.latent_channels
        if z.ndim != 4 or z.shape[0] != d:
            raise ad.ShapeError(f"latents must be [d={d}, D',H',W'], got {z.shape}")
        entries = self.codebook.data
        if entries.size == 0:
            raise ad.ShapeError("empty codebook")
        flat = z.reshape(d, -1)
        d2 = ((flat ** 2).sum(axis=0)[None, :]
              - 2.0 * entries @ flat
              + (entries ** 2).sum(axis=1)[:, None])
        idx = np.argmin(d2, axis=0).reshape(z.shape[1:])
        quantized = np.moveaxis(entries[idx], -1, 0)
        return LatentCode(quantized=quantized, indices=idx)

    def decode(self, code) -> np.ndarray:
        """Decode a LatentCode (or raw latent grid) back to a [1,D,H,W] volume."""
        z = code.quantized if isinstance(code, LatentCode) else np.asarray(code)
        return self.decode_t(ad.Tensor(z)).data

    def reconstruct(self, volume: np.ndarray) -> np.ndarray:
        """encode -> quantize -> decode roundtrip."""
        return self.decode(self.quantize(self.encode(volume)))

    def seed_codebook(self, volume: np.ndarray, rng: np.random.Generator) -> None:
        """Data-dependent init: one entry per random encoder-output site."""
        z = self.encode(volume)
        flat = z.reshape(z.shape[0], -1)
        k = self.config.codebook_size
        picks = rng.choice(flat.shape[1], size=k, replace=flat.shape[1] < k)
        entries = flat[:, picks].T + 0.01 * rng.standard_normal((k, z.shape[0]))
        self.codebook.data[...] = entries
        self._codebook_seeded = True


class CodecDiverged(ArithmeticError):
    pass


def train_codec(codec: VQCodec, volumes, iters: int, lr: float,
                rng: np.random.Generator, commitment: float = 0.25):
    """Train on [1,D,H,W] arrays; returns the per-iteration loss history."""
    if not volumes:
        raise ValueError("empty codec training set")
    params = codec.parameters()
    if not codec._codebook_seeded:
        codec.seed_codebook(volumes[0], rng)
    history = []
    for _ in range(iters):
        x = volumes[rng.integers(len(volumes))]
        try:
            ad.zero_grad(params)
            with ad.Tape() as tape:
                xt = ad.Tensor(np.asarray(x, dtype=np.float64))
                z = codec.encode_t(xt)
                idx = codec.quantize(z.data).indices
                e = ad.gather_rows(codec.codebook, idx)
                z_st = ad.straight_through(z, e)
                recon = codec.decode_t(z_st)
                loss = ad.add(
                    ad.mse_loss(recon, xt),
                    ad.add(ad.mse_loss(e, ad.stop_gradient(z)),
                           ad.scale(ad.mse_loss(z, ad.stop_gradient(e)), commitment)))
                tape.backward(loss)
            ad.adam_step(params, lr)
        except ad.NumericError as exc:
            raise CodecDiverged(
                f"codec training diverged at iteration {len(history)}: {exc}") from exc
        value = loss.item()
        if not np.isfinite(value):
            raise CodecDiverged(
                f"codec training diverged at iteration {len(history)}")
        history.append(value)
    return history
