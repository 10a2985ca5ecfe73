"""Conditioning assembly, training steps, and per-variant samplers.

The value domain per variant follows the preprocessing convention: image-
space variants condition on [0,1] volumes; the latent and wavelet variants
map images to [-1,1] first (masks stay binary in every domain). Samplers
always composite so that voxels outside the mask are bitwise ground truth.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import schedule as sc
from . import wavelet as wv
from .nets import UNetDenoiser, VARIANTS
from .volume import Volume

IMAGE_VARIANTS = ("2d_slice", "2d_seqpos", "pseudo3d", "3d")


class EngineError(ValueError):
    pass


class TrainingDiverged(ArithmeticError):
    def __init__(self, message: str, checkpoint_path: str | None = None):
        if checkpoint_path:
            message += f" (last good checkpoint: {checkpoint_path})"
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


def conditioning_channels(variant: str, latent_channels: int = 4) -> int:
    """Input channel count of the denoiser per conditioning layout."""
    if variant in ("2d_slice", "pseudo3d", "3d"):
        return 3
    if variant == "2d_seqpos":
        return 4
    if variant == "wavelet3d":
        return 24
    if variant == "latent3d":
        return 3 * latent_channels
    raise EngineError(f"unknown variant {variant!r}")


def state_channels(variant: str, latent_channels: int = 4) -> int:
    """Channel count of the diffused state x_t itself."""
    if variant in IMAGE_VARIANTS:
        return 1
    return 8 if variant == "wavelet3d" else latent_channels


@dataclass
class ConditioningBundle:
    """Channeled conditioning arrays sharing the spatial extents of x_t."""

    mask: np.ndarray
    masked_image: np.ndarray
    prev_slice: np.ndarray | None = None
    domain: str = "image"          # image | latent | wavelet


@dataclass
class InpaintTask:
    ground_truth: Volume
    mask: Volume
    variant: str
    schedule: sc.NoiseSchedule

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise EngineError(f"unknown variant {self.variant!r}")
        if self.ground_truth.shape != self.mask.shape:
            raise EngineError(
                f"ground truth {self.ground_truth.shape} vs mask {self.mask.shape}")
        vals = np.unique(self.mask.data)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise EngineError("mask must be binary")
        # An empty mask is allowed so samplers can pass the volume through;
        # training rejects it (there is nothing to learn from).


@dataclass
class SampleOptions:
    seed: int
    store_intermediates: bool = False
    zero_all_noise: bool = False   # oracle tests: suppress every z draw
    threads: int | None = None     # slicewise chain parallelism cap
    clamp_x0: bool = True          # clamp the implied clean signal per step


def domain_bounds(variant: str, codec=None) -> tuple:
    """Value range of the clean signal in the variant's diffusion domain.

    Clamping the per-step clean-signal estimate to this range is a no-op for
    accurate predictions but keeps weakly trained models from amplifying
    early-chain errors.
    """
    if variant in IMAGE_VARIANTS:
        return (0.0, 1.0)
    if variant == "wavelet3d":
        # pm1 voxels bound every orthonormal Haar coefficient by 2*sqrt(2)
        bound = 2.0 * np.sqrt(2.0)
        return (-bound, bound)
    if variant == "latent3d":
        entries = codec.codebook.data
        return (float(entries.min()), float(entries.max()))
    raise EngineError(f"unknown variant {variant!r}")


@dataclass
class SampleResult:
    volume: Volume
    variant: str
    seed: int
    T: int
    wall_clock: float
    chains: list = field(default_factory=list)
    trace: list | None = None

    def manifest(self) -> dict:
        out = {"variant": self.variant, "seed": self.seed, "T": self.T,
               "wall_clock": self.wall_clock, "chains": self.chains}
        if self.trace is not None:
            out["trace"] = self.trace
        return out


def assemble_conditioning(x_t: np.ndarray, bundle: ConditioningBundle,
                          variant: str) -> np.ndarray:
    """Channel-concatenate (x_t, b, m[, x_prev]) for the denoiser."""
    parts = [np.asarray(x_t, dtype=np.float64),
             np.asarray(bundle.masked_image, dtype=np.float64),
             np.asarray(bundle.mask, dtype=np.float64)]
    if variant == "2d_seqpos":
        if bundle.prev_slice is None:
            raise EngineError("2d_seqpos conditioning requires prev_slice")
        parts.append(np.asarray(bundle.prev_slice, dtype=np.float64))
    spatial = parts[0].shape[1:]
    for p in parts[1:]:
        if p.shape[1:] != spatial:
            raise EngineError(
                f"conditioning spatial mismatch: {p.shape[1:]} vs {spatial}")
    return np.concatenate(parts, axis=0)


def to_pm1(x01: np.ndarray) -> np.ndarray:
    return 2.0 * x01 - 1.0


def to_01(xpm1: np.ndarray) -> np.ndarray:
    return (xpm1 + 1.0) / 2.0


def composite_output(generated01, task: InpaintTask) -> Volume:
    """b + generated * m: known voxels stay bitwise ground truth."""
    gen = generated01.as_f64() if isinstance(generated01, Volume) \
        else np.asarray(generated01, dtype=np.float64)
    gt = task.ground_truth.as_f64()
    m = task.mask.as_f64()
    if gen.shape != gt.shape:
        raise EngineError(f"generated {gen.shape} vs ground truth {gt.shape}")
    b = gt * (1.0 - m)
    out = b + gen * m
    meta = dict(task.ground_truth.meta)
    meta["inpainted"] = task.variant
    return Volume(out.astype(np.float32), meta)


def mean_fill_baseline(task: InpaintTask) -> Volume:
    """Fill the mask with the mean of the unmasked voxels."""
    gt = task.ground_truth.as_f64()
    m = task.mask.as_f64()
    fill = gt[m == 0.0].mean()
    return composite_output(np.full_like(gt, fill), task)


# ---------------------------------------------------------------------------
# Training

def _masked_slices(mask: np.ndarray) -> list:
    return [k for k in range(mask.shape[0]) if mask[k].any()]


def _prev_slice(gt01: np.ndarray, k: int) -> np.ndarray:
    return gt01[k - 1][None] if k > 0 else np.zeros_like(gt01[0][None])


class Trainer:
    """Single-writer training state: denoiser, Adam moments, and domain prep."""

    def __init__(self, denoiser: UNetDenoiser, schedule: sc.NoiseSchedule,
                 lr: float, codec=None, chunk_depth: int = 8,
                 crop: tuple | None = None):
        self.denoiser = denoiser
        self.schedule = schedule
        self.lr = lr
        self.codec = codec
        self.chunk_depth = chunk_depth
        self.crop = crop
        self.params = denoiser.parameters()
        self.checkpoint_path: str | None = None
        variant = denoiser.config.variant
        if variant == "latent3d":
            if codec is None:
                raise EngineError("latent3d training requires a codec")
            want = conditioning_channels(variant, codec.config.latent_channels)
        else:
            want = conditioning_channels(variant)
        if denoiser.config.in_channels != want:
            raise EngineError(
                f"{variant} expects {want} input channels, denoiser has "
                f"{denoiser.config.in_channels}")

    def _encode(self, volume3d: np.ndarray) -> np.ndarray:
        return self.codec.quantize(self.codec.encode(volume3d[None])).quantized

    def _training_example(self, task: InpaintTask, rng: np.random.Generator):
        """Build (x0, bundle, slice_pos) in the variant's domain."""
        variant = self.denoiser.config.variant
        gt01 = task.ground_truth.as_f64()
        m = task.mask.as_f64()
        if not m.any():
            raise EngineError("cannot train on a task with an empty mask")
        b01 = gt01 * (1.0 - m)

        if variant in ("2d_slice", "2d_seqpos"):
            slices = _masked_slices(m)
            k = int(slices[rng.integers(len(slices))])
            bundle = ConditioningBundle(mask=m[k][None], masked_image=b01[k][None],
                                        prev_slice=_prev_slice(gt01, k)
                                        if variant == "2d_seqpos" else None)
            return gt01[k][None], bundle, k

        if variant == "pseudo3d":
            d = gt01.shape[0]
            cd = min(self.chunk_depth, d)
            starts = [s for s in range(d - cd + 1) if m[s:s + cd].any()]
            s = int(starts[rng.integers(len(starts))])
            sel = slice(s, s + cd)
            bundle = ConditioningBundle(mask=m[sel][None], masked_image=b01[sel][None])
            return gt01[sel][None], bundle, None

        if variant == "3d":
            sel = self._crop_window(m, rng)
            bundle = ConditioningBundle(mask=m[sel][None], masked_image=b01[sel][None])
            return gt01[sel][None], bundle, None

        if variant == "wavelet3d":
            gtp = to_pm1(gt01)
            bp = gtp * (1.0 - m)
            bundle = ConditioningBundle(mask=wv.dwt3(m[None]).subbands,
                                        masked_image=wv.dwt3(bp[None]).subbands,
                                        domain="wavelet")
            return wv.dwt3(gtp[None]).subbands, bundle, None

        # latent3d
        gtp = to_pm1(gt01)
        bp = gtp * (1.0 - m)
        bundle = ConditioningBundle(mask=self._encode(m),
                                    masked_image=self._encode(bp),
                                    domain="latent")
        return self._encode(gtp), bundle, None

    def _crop_window(self, m: np.ndarray, rng: np.random.Generator):
        if self.crop is None:
            return tuple(slice(None) for _ in range(3))
        sel = []
        idx = np.argwhere(m > 0)
        for ax, c in enumerate(self.crop):
            extent = m.shape[ax]
            if c >= extent:
                sel.append(slice(None))
                continue
            lo_bound = max(0, int(idx[:, ax].min()) - c + 1)
            hi_bound = min(extent - c, int(idx[:, ax].max()))
            s = int(rng.integers(lo_bound, hi_bound + 1))
            sel.append(slice(s, s + c))
        return tuple(sel)

    def _build_loss(self, task: InpaintTask, rng: np.random.Generator) -> ad.Tensor:
        """Draw (t, location, noise) and build the training loss graph."""
        if task.variant != self.denoiser.config.variant:
            raise EngineError(
                f"task variant {task.variant} vs denoiser "
                f"{self.denoiser.config.variant}")
        t = int(rng.integers(1, self.schedule.T + 1))
        x0, bundle, slice_pos = self._training_example(task, rng)
        eps = rng.standard_normal(x0.shape)
        x_t = sc.forward_diffuse(x0, t, eps, self.schedule)
        x_in = assemble_conditioning(x_t, bundle, self.denoiser.config.variant)
        target = x0 if self.schedule.prediction_target == "x0" else eps
        pred = self.denoiser(x_in, t, slice_pos=slice_pos)
        return ad.mse_loss(pred, ad.Tensor(target))

    def train_step(self, task: InpaintTask, rng: np.random.Generator,
                   update: bool = True) -> float:
        """One example, one optimizer step; returns the loss."""
        return self.train_batch([task], rng, update)

    def train_batch(self, tasks, rng: np.random.Generator,
                    update: bool = True) -> float:
        """Accumulate gradients over several examples, then step once."""
        if not tasks:
            raise EngineError("empty training batch")
        values = []
        try:
            if update:
                ad.zero_grad(self.params)
            for task in tasks:
                with ad.Tape() as tape:
                    loss = self._build_loss(task, rng)
                    if update:
                        tape.backward(loss)
                values.append(loss.item())
            if update:
                if len(tasks) > 1:
                    for p in self.params:
                        p.grad /= len(tasks)
                ad.adam_step(self.params, self.lr)
        except ad.NumericError as exc:
            raise TrainingDiverged(f"training loss diverged: {exc}",
                                   self.checkpoint_path) from exc
        value = float(np.mean(values))
        if not np.isfinite(value):
            raise TrainingDiverged("training loss is not finite",
                                   self.checkpoint_path)
        return value


# ---------------------------------------------------------------------------
# Sampling

def _predict(denoiser, x_in: np.ndarray, t: int, slice_pos=None) -> np.ndarray:
    out = denoiser(x_in, t, slice_pos=slice_pos)
    return out.data if isinstance(out, ad.Tensor) else np.asarray(out)


def _run_chain(predict, shape: tuple, sched: sc.NoiseSchedule,
               rng: np.random.Generator, opts: SampleOptions,
               trace: list | None, bounds: tuple | None = None) -> np.ndarray:
    x = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        pred = predict(x, t)
        if bounds is not None and opts.clamp_x0:
            x0_hat = np.clip(sc.prediction_to_x0(pred, x, t, sched), *bounds)
            pred = sc.x0_to_prediction(x0_hat, x, t, sched)
        if t > 1 and not opts.zero_all_noise:
            z = rng.standard_normal(shape)
        else:
            z = np.zeros(shape)
        x = sc.reverse_step(x, t, pred, z, sched)
        if trace is not None:
            trace.append({"t": t, "sigma": sched.sigma(t),
                          "pred_abs_mean": float(np.abs(pred).mean())})
    return x


def _thread_count(opts: SampleOptions) -> int:
    if opts.threads is not None:
        return max(1, opts.threads)
    return max(1, int(os.environ.get("VOXELPAINT_THREADS", "1")))


def _result(task, out01, opts, t0, chains, trace) -> SampleResult:
    return SampleResult(volume=composite_output(out01, task),
                        variant=task.variant, seed=opts.seed,
                        T=task.schedule.T,
                        wall_clock=time.perf_counter() - t0,
                        chains=chains, trace=trace)


def sample_2d_slicewise(denoiser, task: InpaintTask,
                        opts: SampleOptions) -> SampleResult:
    """Independent reverse chains for every slice with a nonzero mask."""
    t0 = time.perf_counter()
    gt01 = task.ground_truth.as_f64()
    m = task.mask.as_f64()
    out = gt01.copy()
    slices = _masked_slices(m)
    trace = [] if opts.store_intermediates else None
    if not slices:
        return _result(task, out, opts, t0, [], trace)

    b01 = gt01 * (1.0 - m)
    streams = np.random.SeedSequence(opts.seed).spawn(gt01.shape[0])

    def run_slice(k: int) -> np.ndarray:
        rng = np.random.default_rng(streams[k])
        bundle = ConditioningBundle(mask=m[k][None], masked_image=b01[k][None])
        chain_trace = [] if opts.store_intermediates else None

        def predict(x, t):
            return _predict(denoiser, assemble_conditioning(x, bundle, task.variant),
                            t, slice_pos=k)

        x0 = _run_chain(predict, (1,) + gt01.shape[1:], task.schedule, rng,
                        opts, chain_trace, bounds=domain_bounds(task.variant))
        return x0[0], chain_trace

    n_threads = min(_thread_count(opts), len(slices))
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run_slice, slices))
    else:
        results = [run_slice(k) for k in slices]
    for k, (gen, chain_trace) in zip(slices, results):
        out[k] = gen
        if trace is not None:
            trace.append({"chain": k, "steps": chain_trace})
    return _result(task, out, opts, t0, list(slices), trace)


def sample_2d_seqpos(denoiser, task: InpaintTask,
                     opts: SampleOptions) -> SampleResult:
    """Ascending slice-by-slice sampling, conditioning on the previous slice."""
    t0 = time.perf_counter()
    gt01 = task.ground_truth.as_f64()
    m = task.mask.as_f64()
    out = gt01.copy()
    slices = _masked_slices(m)
    trace = [] if opts.store_intermediates else None
    if not slices:
        return _result(task, out, opts, t0, [], trace)

    b01 = gt01 * (1.0 - m)
    streams = np.random.SeedSequence(opts.seed).spawn(gt01.shape[0])
    for k in slices:
        rng = np.random.default_rng(streams[k])
        prev = out[k - 1][None] if k > 0 else np.zeros_like(out[0][None])
        bundle = ConditioningBundle(mask=m[k][None], masked_image=b01[k][None],
                                    prev_slice=prev)
        chain_trace = [] if opts.store_intermediates else None

        def predict(x, t, k=k, bundle=bundle):
            return _predict(denoiser, assemble_conditioning(x, bundle, task.variant),
                            t, slice_pos=k)

        gen = _run_chain(predict, (1,) + gt01.shape[1:], task.schedule, rng,
                         opts, chain_trace,
                         bounds=domain_bounds(task.variant))[0]
        # keep known voxels exact before the next slice conditions on this one
        out[k] = b01[k] + gen * m[k]
        if trace is not None:
            trace.append({"chain": k, "steps": chain_trace})
    return _result(task, out, opts, t0, list(slices), trace)


def sample_volume(denoiser, task: InpaintTask,
                  opts: SampleOptions) -> SampleResult:
    """One reverse chain over the whole volume (pseudo3d and 3d variants)."""
    t0 = time.perf_counter()
    gt01 = task.ground_truth.as_f64()
    m = task.mask.as_f64()
    trace = [] if opts.store_intermediates else None
    if not m.any():
        return _result(task, gt01.copy(), opts, t0, [], trace)
    bundle = ConditioningBundle(mask=m[None], masked_image=(gt01 * (1.0 - m))[None])
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed))

    def predict(x, t):
        return _predict(denoiser, assemble_conditioning(x, bundle, task.variant), t)

    chain_trace = [] if opts.store_intermediates else None
    gen = _run_chain(predict, (1,) + gt01.shape, task.schedule, rng, opts,
                     chain_trace, bounds=domain_bounds(task.variant))[0]
    if trace is not None:
        trace.append({"chain": "volume", "steps": chain_trace})
    return _result(task, gen, opts, t0, ["volume"], trace)


def sample_latent(codec, denoiser, task: InpaintTask,
                  opts: SampleOptions) -> SampleResult:
    """Reverse chain in the quantized latent space, then decode and composite."""
    t0 = time.perf_counter()
    d = codec.config.latent_channels
    if denoiser.config.in_channels != 3 * d:
        raise EngineError(
            f"latent denoiser expects {3 * d} channels for d={d}, got "
            f"{denoiser.config.in_channels}")
    gt01 = task.ground_truth.as_f64()
    m = task.mask.as_f64()
    trace = [] if opts.store_intermediates else None
    if not m.any():
        return _result(task, gt01.copy(), opts, t0, [], trace)

    bp = to_pm1(gt01) * (1.0 - m)
    b_lat = codec.quantize(codec.encode(bp[None])).quantized
    m_lat = codec.quantize(codec.encode(m[None])).quantized
    bundle = ConditioningBundle(mask=m_lat, masked_image=b_lat, domain="latent")
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed))

    def predict(x, t):
        return _predict(denoiser, assemble_conditioning(x, bundle, task.variant), t)

    chain_trace = [] if opts.store_intermediates else None
    lat0 = _run_chain(predict, b_lat.shape, task.schedule, rng, opts,
                      chain_trace, bounds=domain_bounds(task.variant, codec))
    decoded = codec.decode(codec.quantize(lat0))[0]
    if trace is not None:
        trace.append({"chain": "latent", "steps": chain_trace})
    return _result(task, to_01(decoded), opts, t0, ["latent"], trace)


def sample_wavelet(denoiser, task: InpaintTask,
                   opts: SampleOptions) -> SampleResult:
    """Reverse chain over Haar subbands with x0-prediction, then inverse DWT."""
    t0 = time.perf_counter()
    gt01 = task.ground_truth.as_f64()
    m = task.mask.as_f64()
    trace = [] if opts.store_intermediates else None
    if not m.any():
        return _result(task, gt01.copy(), opts, t0, [], trace)

    bp = to_pm1(gt01) * (1.0 - m)
    bundle = ConditioningBundle(mask=wv.dwt3(m[None]).subbands,
                                masked_image=wv.dwt3(bp[None]).subbands,
                                domain="wavelet")
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed))

    def predict(x, t):
        return _predict(denoiser, assemble_conditioning(x, bundle, task.variant), t)

    chain_trace = [] if opts.store_intermediates else None
    wav0 = _run_chain(predict, bundle.mask.shape, task.schedule, rng, opts,
                      chain_trace, bounds=domain_bounds(task.variant))
    gen = to_01(wv.idwt3(wv.WaveletCoeffs(wav0))[0])
    if trace is not None:
        trace.append({"chain": "wavelet", "steps": chain_trace})
    return _result(task, gen, opts, t0, ["wavelet"], trace)


def sample(denoiser, task: InpaintTask, opts: SampleOptions,
           codec=None) -> SampleResult:
    """Dispatch to the variant's sampler."""
    if task.variant in ("2d_slice",):
        return sample_2d_slicewise(denoiser, task, opts)
    if task.variant == "2d_seqpos":
        return sample_2d_seqpos(denoiser, task, opts)
    if task.variant in ("pseudo3d", "3d"):
        return sample_volume(denoiser, task, opts)
    if task.variant == "latent3d":
        if codec is None:
            raise EngineError("latent3d sampling requires a codec")
        return sample_latent(codec, denoiser, task, opts)
    if task.variant == "wavelet3d":
        return sample_wavelet(denoiser, task, opts)
    raise EngineError(f"unknown variant {task.variant!r}")


# ---------------------------------------------------------------------------
# Oracles (test instrumentation with the denoiser call signature)

class EpsilonOracle:
    """Returns the exact noise consistent with the current x_t and the known
    clean volume; a reverse chain driven by it recovers the ground truth."""

    def __init__(self, ground_truth01: np.ndarray, schedule: sc.NoiseSchedule,
                 variant: str):
        if variant not in IMAGE_VARIANTS:
            raise EngineError("epsilon oracle is defined for image-space variants")
        self.gt = np.asarray(ground_truth01, dtype=np.float64)
        self.schedule = schedule
        self.variant = variant

    def __call__(self, x_in: np.ndarray, t: int, slice_pos=None) -> np.ndarray:
        x_t = x_in[0:1]
        if self.variant in ("2d_slice", "2d_seqpos"):
            x0 = self.gt[slice_pos][None]
        else:
            x0 = self.gt[None]
        ab = self.schedule.alpha_bar(t)
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)


class FixedPredictionOracle:
    """Returns a constant prediction regardless of input (conditioning probes)."""

    def __init__(self, value: float = 0.0):
        self.value = value

    def __call__(self, x_in: np.ndarray, t: int, slice_pos=None) -> np.ndarray:
        return np.full_like(np.asarray(x_in[0:1], dtype=np.float64), self.value)
