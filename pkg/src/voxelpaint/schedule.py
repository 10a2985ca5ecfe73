"""Noise schedule and the forward/reverse diffusion arithmetic.

Step indices run t = 1..T; t = 0 means clean data. Internally the per-step
tables are 0-indexed, with accessors doing the conversion. All operations
here are pure numpy on plain arrays; gradients never flow through them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA_MODES = ("beta", "posterior")
PREDICTION_TARGETS = ("epsilon", "x0")

# Standard linear-schedule endpoints at the reference step count.
REFERENCE_T = 1000
REFERENCE_BETA_START = 1e-4
REFERENCE_BETA_END = 0.02


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable per-step tables; freely shareable across threads."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray
    sigma_mode: str = "beta"
    prediction_target: str = "epsilon"
    beta_start: float = field(default=0.0)
    beta_end: float = field(default=0.0)

    def _check_t(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ScheduleError(f"step {t} outside 1..{self.T}")
        return t - 1

    def beta(self, t: int) -> float:
        return float(self.betas[self._check_t(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check_t(t)])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product of alphas; alpha_bar(0) is 1 by convention."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._check_t(t)])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[self._check_t(t)])

    def to_config(self) -> dict:
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sigma_mode": self.sigma_mode,
            "prediction_target": self.prediction_target,
        }


@dataclass
class DiffusionState:
    """A point on the chain: the current tensor and its step index."""

    x_t: np.ndarray
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ScheduleError(f"step index {self.t} is negative")


def linear_schedule(T: int, beta_start: float, beta_end: float,
                    sigma_mode: str = "beta",
                    prediction_target: str = "epsilon") -> NoiseSchedule:
    """Linearly spaced betas (inclusive endpoints) with derived tables."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    if sigma_mode not in SIGMA_MODES:
        raise ScheduleError(f"sigma_mode must be one of {SIGMA_MODES}")
    if prediction_target not in PREDICTION_TARGETS:
        raise ScheduleError(f"prediction_target must be one of {PREDICTION_TARGETS}")

    betas = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if sigma_mode == "beta":
        sigmas = np.sqrt(betas)
    else:
        prev_bars = np.concatenate([[1.0], alpha_bars[:-1]])
        sigmas = np.sqrt((1.0 - prev_bars) / (1.0 - alpha_bars) * betas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars,
                         sigmas=sigmas, sigma_mode=sigma_mode,
                         prediction_target=prediction_target,
                         beta_start=beta_start, beta_end=beta_end)


def default_schedule(T: int, sigma_mode: str = "beta",
                     prediction_target: str = "epsilon") -> NoiseSchedule:
    """Linear schedule rescaled so the total noise budget matches T=1000.

    Betas are multiplied by 1000/T, keeping sum(beta) roughly constant so
    alpha_bar(T) stays near zero at toy step counts. The upper endpoint is
    clamped below 1 for very small T; tests that need exact endpoints should
    call linear_schedule directly.
    """
    factor = REFERENCE_T / T
    beta_end = min(REFERENCE_BETA_END * factor, 0.995)
    beta_start = min(REFERENCE_BETA_START * factor, beta_end)
    return linear_schedule(T, beta_start, beta_end, sigma_mode, prediction_target)


def _require_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ScheduleError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray,
                    sched: NoiseSchedule) -> np.ndarray:
    """Closed-form marginal: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _require_shape(x0, eps, "forward_diffuse")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def q_transition_sample(x_prev: np.ndarray, t: int, z: np.ndarray,
                        sched: NoiseSchedule) -> np.ndarray:
    """Single forward transition: sqrt(1 - beta_t) * x_{t-1} + sqrt(beta_t) * z."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _require_shape(x_prev, z, "q_transition_sample")
    b = sched.beta(t)
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * z


def prediction_to_eps(prediction: np.ndarray, x_t: np.ndarray, t: int,
                      sched: NoiseSchedule) -> np.ndarray:
    """Map the network output to an eps-estimate, honoring the target mode."""
    if sched.prediction_target == "epsilon":
        return prediction
    ab = sched.alpha_bar(t)
    return (x_t - np.sqrt(ab) * prediction) / np.sqrt(1.0 - ab)


def prediction_to_x0(prediction: np.ndarray, x_t: np.ndarray, t: int,
                     sched: NoiseSchedule) -> np.ndarray:
    """The clean-signal estimate implied by the network output."""
    if sched.prediction_target == "x0":
        return prediction
    ab = sched.alpha_bar(t)
    return (x_t - np.sqrt(1.0 - ab) * prediction) / np.sqrt(ab)


def x0_to_prediction(x0_hat: np.ndarray, x_t: np.ndarray, t: int,
                     sched: NoiseSchedule) -> np.ndarray:
    """Re-express a clean-signal estimate in the schedule's target mode."""
    if sched.prediction_target == "x0":
        return x0_hat
    ab = sched.alpha_bar(t)
    return (x_t - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)


def reverse_step(x_t: np.ndarray, t: int, prediction: np.ndarray,
                 z: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """One reverse update; ``prediction`` is eps-hat or x0-hat per the schedule.

    The final step (t = 1) must not add noise: callers pass all-zero z there.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _require_shape(x_t, prediction, "reverse_step")
    _require_shape(x_t, z, "reverse_step")
    sched._check_t(t)
    if t == 1 and np.any(z != 0.0):
        raise ScheduleError("reverse_step: noise must be zero at the final step")

    eps_hat = prediction_to_eps(prediction, x_t, t, sched)
    a = sched.alpha(t)
    ab = sched.alpha_bar(t)
    mean = (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    return mean + sched.sigma(t) * z
