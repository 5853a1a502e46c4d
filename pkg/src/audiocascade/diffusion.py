"""Diffusion dynamics: noise schedules, forward corruption, the ancestral
sampler with classifier-free guidance, and denoising step schedules.

Time runs over [0, 1]; t=0 is clean data. A schedule maps t to the noise
standard deviation sigma_t, with alpha_t = sqrt(1 - sigma_t^2) and the
log-SNR lambda_t = ln(alpha_t^2 / sigma_t^2). Everything here is a pure
function of its inputs (noise tensors are passed in explicitly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import nn
from .nn import Tensor

LAMBDA_CLAMP = 20.0
LINEAR_SIGMA0_SQ = 0.0001
LINEAR_SIGMA1_SQ = 0.02

# cosine schedule: alpha_t = cos(a t + b), pinned so the log-SNR runs 20 -> -20
_COS_B = math.atan(math.exp(-10.0))
_COS_A = math.atan(math.exp(10.0)) - _COS_B


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str  # "linear" | "cosine"
    sigma0_sq: float = LINEAR_SIGMA0_SQ
    sigma1_sq: float = LINEAR_SIGMA1_SQ
    lambda_clamp: float = LAMBDA_CLAMP

    def __post_init__(self):
        if self.kind not in ("linear", "cosine"):
            raise ConfigError(f"unknown noise schedule kind {self.kind!r}")


LINEAR = NoiseSchedule("linear")
COSINE = NoiseSchedule("cosine")


@dataclass(frozen=True)
class TransitionStats:
    sigma_t_given_s_sq: float
    sigma_tilde_s_given_t_sq: float
    ratio: float  # e^(lambda_t - lambda_s)


@dataclass(frozen=True)
class SamplerParams:
    gamma: float = 0.0
    cfg_scale: float | None = None
    dynamic_clip_percentile: float = 0.995

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.cfg_scale is not None and self.cfg_scale < 0:
            raise DomainError("cfg_scale must be >= 0")
        if not 0.0 < self.dynamic_clip_percentile <= 1.0:
            raise DomainError("dynamic_clip_percentile must be in (0, 1]")


class LossWeight(Enum):
    SIMPLIFIED = "simplified"
    SIGMA = "sigma"


def schedule_at(schedule: NoiseSchedule, t: float) -> tuple[float, float, float]:
    """Return (sigma_t, alpha_t, lambda_t) for a single time in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"diffusion time {t} outside [0, 1]")
    if schedule.kind == "linear":
        sig_sq = (schedule.sigma1_sq - schedule.sigma0_sq) * t + schedule.sigma0_sq
        sigma = math.sqrt(sig_sq)
        alpha = math.sqrt(1.0 - sig_sq)
        lam = math.log((1.0 - sig_sq) / sig_sq)
    else:
        phase = _COS_A * t + _COS_B
        alpha = math.cos(phase)
        sigma = math.sin(phase)
        # ln(alpha^2/sigma^2) = -2 ln(tan(phase)), stable at both endpoints
        lam = -2.0 * math.log(math.tan(phase))
    lam = min(max(lam, -schedule.lambda_clamp), schedule.lambda_clamp)
    return sigma, alpha, lam


def transition(schedule: NoiseSchedule, s: float, t: float) -> TransitionStats:
    """Forward/reverse transition variances between times s <= t."""
    if s > t:
        raise DomainError(f"transition requires s <= t, got s={s}, t={t}")
    sigma_s, _, lam_s = schedule_at(schedule, s)
    sigma_t, _, lam_t = schedule_at(schedule, t)
    ratio = math.exp(lam_t - lam_s)
    one_minus = 1.0 - ratio
    return TransitionStats(
        sigma_t_given_s_sq=one_minus * sigma_t ** 2,
        sigma_tilde_s_given_t_sq=one_minus * sigma_s ** 2,
        ratio=ratio,
    )


def forward_corrupt(x: np.ndarray, t: float, eps: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """x_t = alpha_t * x + sigma_t * eps."""
    x = np.asarray(x)
    eps = np.asarray(eps)
    if x.shape != eps.shape:
        raise ShapeError(f"x shape {x.shape} != eps shape {eps.shape}")
    sigma, alpha, _ = schedule_at(schedule, t)
    return alpha * x + sigma * eps


def x0_estimate(x_t, eps_hat, t: float, schedule: NoiseSchedule):
    """Invert the corruption: x0 = (x_t - sigma_t * eps_hat) / alpha_t.

    Works on numpy arrays or autodiff tensors alike.
    """
    sigma, alpha, _ = schedule_at(schedule, t)
    if alpha == 0.0:
        raise DomainError("alpha_t = 0: x0 estimate is singular")
    if isinstance(x_t, Tensor) or isinstance(eps_hat, Tensor):
        return nn.mul(nn.add(x_t, nn.mul(eps_hat, -sigma)), 1.0 / alpha)
    return (np.asarray(x_t) - sigma * np.asarray(eps_hat)) / alpha


def eps_from_x0(x_t: np.ndarray, x0: np.ndarray, t: float,
                schedule: NoiseSchedule) -> np.ndarray:
    """Noise vector implied by a clean-sample estimate (inverse of x0_estimate)."""
    sigma, alpha, _ = schedule_at(schedule, t)
    return (np.asarray(x_t) - alpha * np.asarray(x0)) / sigma


def ancestral_step(x_t: np.ndarray, eps_hat: np.ndarray, s: float, t: float,
                   schedule: NoiseSchedule, params: SamplerParams,
                   noise: np.ndarray) -> np.ndarray:
    """One reverse-diffusion update from time t down to time s < t.

    x_s = (a_s/a_t) x_t - (1 - e^(l_t - l_s)) (a_s/a_t) sigma_t eps_hat
          + sigma_tilde_{s|t}^(1-gamma) * sigma_{t|s}^gamma * noise
    """
    if s >= t:
        raise DomainError(f"ancestral step requires s < t, got s={s}, t={t}")
    x_t = np.asarray(x_t)
    if np.shape(noise) != x_t.shape:
        raise ShapeError("noise must match the sample shape")
    sigma_t, alpha_t, lam_t = schedule_at(schedule, t)
    _, alpha_s, lam_s = schedule_at(schedule, s)
    stats = transition(schedule, s, t)
    scale = alpha_s / alpha_t
    noise_std = (math.sqrt(stats.sigma_tilde_s_given_t_sq) ** (1.0 - params.gamma)
                 * math.sqrt(stats.sigma_t_given_s_sq) ** params.gamma)
    return (scale * x_t
            - (1.0 - stats.ratio) * scale * sigma_t * np.asarray(eps_hat)
            + noise_std * noise)


def cfg_combine(eps_cond, eps_uncond, w: float):
    """Guided noise estimate: w * eps_cond + (1 - w) * eps_uncond."""
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeError(f"shape mismatch: {eps_cond.shape} vs {eps_uncond.shape}")
    return w * eps_cond + (1.0 - w) * eps_uncond


def dynamic_clip(x0_hat: np.ndarray, percentile: float,
                 sample_axes: tuple | None = None) -> np.ndarray:
    """Percentile-based clamping of a clean-sample estimate into [-1, 1].

    s = max(1, percentile-quantile of |x0_hat|); output = clamp(x, -s, s) / s.
    `sample_axes` restricts the quantile to given axes (per-example clipping
    in a batched sampler); default uses every element.
    """
    if not 0.0 < percentile <= 1.0:
        raise DomainError(f"percentile must be in (0, 1], got {percentile}")
    x0_hat = np.asarray(x0_hat)
    if x0_hat.size == 0:
        raise DomainError("dynamic_clip on an empty tensor")
    q = np.quantile(np.abs(x0_hat), percentile, axis=sample_axes, keepdims=True)
    s = np.maximum(1.0, q)
    return np.clip(x0_hat, -s, s) / s


def diffusion_loss(eps_hat, eps, t, weight: LossWeight, schedule: NoiseSchedule):
    """Weighted mean-squared error on the noise prediction.

    Per example: w_t * mean over elements of (eps_hat - eps)^2, then mean over
    the batch. Unbatched inputs are treated as a single example. Returns an
    autodiff Tensor when eps_hat is one, else a float.
    """
    is_tensor = isinstance(eps_hat, Tensor)
    shape = tuple(eps_hat.shape if is_tensor else np.shape(eps_hat))
    eps = np.asarray(eps)
    if shape != eps.shape:
        raise ShapeError(f"eps_hat shape {shape} != eps shape {eps.shape}")

    t_arr = np.asarray(t, dtype=np.float64)
    batched = t_arr.ndim > 0
    if batched and (len(shape) < 2 or shape[0] != t_arr.shape[0]):
        raise ShapeError("per-example t requires a leading batch axis on eps_hat")

    def weight_of(tv: float) -> float:
        if weight is LossWeight.SIMPLIFIED:
            return 1.0
        return schedule_at(schedule, tv)[0] ** 2

    if not is_tensor:
        err = np.asarray(eps_hat) - eps
        if batched:
            w = np.array([weight_of(float(tv)) for tv in t_arr])
            per = (err ** 2).reshape(err.shape[0], -1).mean(axis=1)
            return float((w * per).mean())
        return float(weight_of(float(t_arr)) * (err ** 2).mean())

    err = nn.add(eps_hat, -eps)
    sq = nn.mul(err, err)
    if batched:
        w = np.array([weight_of(float(tv)) for tv in t_arr])
        per = nn.reduce_mean(nn.reshape(sq, (shape[0], -1)), axis=1)
        return nn.reduce_mean(nn.mul(per, w))
    return nn.mul(nn.reduce_mean(sq), weight_of(float(t_arr)))


# -- denoising step schedules -------------------------------------------------

@dataclass(frozen=True)
class StepSchedule:
    """Ordered positive time step sizes delta_1..delta_N summing to 1."""

    deltas: tuple[float, ...]
    name: str = "custom"
    segments: tuple[tuple[int, float], ...] = field(default=())

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=np.float64)
        if d.size == 0 or np.any(d <= 0):
            raise ConfigError("step sizes must be positive")
        if abs(d.sum() - 1.0) > 1e-9:
            raise ConfigError(f"step sizes sum to {d.sum()!r}, expected 1")

    def __len__(self):
        return len(self.deltas)

    def times(self) -> list[tuple[float, float]]:
        """(t, s) pairs for inference, running from t=1 down to s=0.

        The delta list is indexed from t=0, so inference consumes it in
        reverse; the last s is pinned to exactly 0.
        """
        rev = np.asarray(self.deltas, dtype=np.float64)[::-1]
        cum = np.concatenate([[0.0], np.cumsum(rev)])
        pairs = []
        for i in range(len(rev)):
            t = max(0.0, 1.0 - cum[i])
            s = max(0.0, 1.0 - cum[i + 1])
            if i == len(rev) - 1:
                s = 0.0
            pairs.append((t, s))
        return pairs

    def to_text(self) -> str:
        lines = [f"schedule {self.name}"]
        if self.segments:
            for count, total in self.segments:
                lines.append(f"segment {count} {total:.17g}")
        else:
            for d in self.deltas:
                lines.append(f"segment 1 {d:.17g}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "StepSchedule":
        name = "custom"
        segments: list[tuple[int, float]] = []
        for line in text.strip().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "schedule":
                name = parts[1] if len(parts) > 1 else name
            elif parts[0] == "segment":
                segments.append((int(parts[1]), float(parts[2])))
            else:
                raise ConfigError(f"unknown schedule line {line!r}")
        return StepSchedule.from_segments(segments, name)

    @staticmethod
    def from_segments(segments, name: str = "custom") -> "StepSchedule":
        deltas: list[float] = []
        for count, total in segments:
            deltas.extend([total / count] * count)
        return StepSchedule(tuple(deltas), name=name, segments=tuple(
            (int(c), float(tt)) for c, tt in segments))

    @staticmethod
    def uniform(n: int) -> "StepSchedule":
        return StepSchedule.from_segments([(n, 1.0)], name=f"uniform_{n}")


# Step-size tables, written as (count, total time) segments; front-heavy
# spends most steps near t=0, back-heavy is its exact reversal.
_FRONT_HEAVY: dict[str, list[tuple[int, float]]] = {
    "waveform_generator": [(200, 0.01), (400, 0.04), (200, 0.15), (150, 0.3), (50, 0.5)],
    "waveform_cascader": [(400, 0.05), (200, 0.15), (150, 0.3), (50, 0.5)],
    "spectrogram_generator": [(400, 0.01), (800, 0.04), (400, 0.15), (300, 0.3), (100, 0.5)],
    "spectrogram_vocoder": [(50, 0.05), (30, 0.15), (15, 0.3), (5, 0.5)],
    "superres_cascader": [(400, 0.05), (200, 0.15), (150, 0.3), (50, 0.5)],
}

_UNIFORM_STEPS = {
    "waveform_generator": 1000,
    "waveform_cascader": 800,
    "spectrogram_generator": 1000,
    "spectrogram_vocoder": 100,
}

_BACK_HEAVY_EVAL = {
    "spectrogram_generator": [(50, 0.3), (150, 0.3), (300, 0.2), (500, 0.2)],
}


def make_step_schedule(model: str, kind: str) -> StepSchedule:
    """Reconstruct a named denoising step schedule for a model."""
    if kind == "front_heavy":
        segs = _FRONT_HEAVY.get(model)
        if segs is None:
            raise ConfigError(f"no step schedule for model {model!r}")
        return StepSchedule.from_segments(segs, name=f"{model}:front_heavy")
    if kind == "back_heavy":
        segs = _FRONT_HEAVY.get(model)
        if segs is None or model == "superres_cascader":
            raise ConfigError(f"no back_heavy schedule for model {model!r}")
        fwd = StepSchedule.from_segments(segs)
        return StepSchedule(tuple(reversed(fwd.deltas)), name=f"{model}:back_heavy",
                            segments=tuple(reversed([(c, t) for c, t in segs])))
    if kind == "uniform":
        n = _UNIFORM_STEPS.get(model)
        if n is None:
            raise ConfigError(f"no uniform schedule for model {model!r}")
        return StepSchedule.from_segments([(n, 1.0)], name=f"{model}:uniform")
    if kind == "back_heavy_eval":
        segs = _BACK_HEAVY_EVAL.get(model)
        if segs is None:
            raise ConfigError(f"no back_heavy_eval schedule for model {model!r}")
        return StepSchedule.from_segments(segs, name=f"{model}:back_heavy_eval")
    raise ConfigError(f"unknown step schedule kind {kind!r}")


def schedule_table() -> list[tuple[str, str]]:
    """Every (model, kind) pair with a defined step schedule."""
    pairs = []
    for model in _FRONT_HEAVY:
        pairs.append((model, "front_heavy"))
        if model != "superres_cascader":
            pairs.append((model, "back_heavy"))
    for model in _UNIFORM_STEPS:
        pairs.append((model, "uniform"))
    for model in _BACK_HEAVY_EVAL:
        pairs.append((model, "back_heavy_eval"))
    return pairs
