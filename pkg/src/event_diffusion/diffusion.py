"""Diffusion machinery: noise schedule, forward process, x0 prediction,
deterministic DDIM stepping, and the denoiser/codec contracts.

Latents are plain float64 ndarrays of shape (N, C, H, W) where dimension 0
indexes the frame within a sequence. Diffusion time tau runs 1..T with
gamma_0 defined as 1 so a final step to tau = 0 returns the clean prediction.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .events import FrameSequence


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step retention factors and derived tables.

    alpha[i], gamma[i], lam[i] hold the values at tau = i + 1:
    gamma is the running product of alpha, lam the per-step log
    signal-to-noise ratio log(alpha / (1 - alpha)).
    """

    T: int
    alpha: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        lam = np.asarray(self.lam, dtype=np.float64)
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise InvalidParameterError("T must be a positive integer")
        if alpha.shape != (self.T,) or gamma.shape != (self.T,) or lam.shape != (self.T,):
            raise InvalidInputError("schedule tables must all have length T")
        if not np.all((alpha > 0) & (alpha < 1)):
            raise InvalidInputError("alpha values must lie in (0, 1)")
        if not np.allclose(gamma, np.cumprod(alpha), rtol=1e-12, atol=0):
            raise InvalidInputError("gamma must be the running product of alpha")
        if self.T > 1 and not np.all(np.diff(gamma) < 0):
            raise InvalidInputError("gamma must be strictly decreasing")
        if not (0 < gamma[-1] <= gamma[0] < 1):
            raise InvalidInputError("gamma must satisfy 0 < gamma_T <= gamma_1 < 1")
        expected_lam = np.log(alpha) - np.log1p(-alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(lam - expected_lam) / np.maximum(np.abs(expected_lam), 1e-300)
        if not np.all(rel <= 1e-12):
            raise InvalidInputError("lambda inconsistent with log(alpha/(1-alpha))")
        # a constant-beta schedule legitimately has constant lambda
        if self.T > 1 and not np.all(np.diff(lam) <= 0):
            raise InvalidInputError("lambda must be non-increasing")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "lam", lam)

    def gamma_at(self, tau: int) -> float:
        """gamma_tau with the gamma_0 = 1 convention."""
        if not (0 <= tau <= self.T):
            raise InvalidInputError(f"tau {tau} outside [0, {self.T}]")
        return 1.0 if tau == 0 else float(self.gamma[tau - 1])

    def alpha_at(self, tau: int) -> float:
        if not (1 <= tau <= self.T):
            raise InvalidInputError(f"tau {tau} outside [1, {self.T}]")
        return float(self.alpha[tau - 1])


def build_schedule(
    T: int, beta_start: float = 8.5e-4, beta_end: float = 1.2e-2
) -> NoiseSchedule:
    """Linear-beta schedule: beta interpolates from beta_start to beta_end
    over tau = 1..T, alpha = 1 - beta."""
    if not (isinstance(T, (int, np.integer)) and T >= 1):
        raise InvalidParameterError("T must be a positive integer")
    if not (0 < beta_start <= beta_end < 1):
        raise InvalidParameterError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    gamma = np.cumprod(alpha)
    lam = np.log(alpha) - np.log1p(-alpha)
    return NoiseSchedule(T=int(T), alpha=alpha, gamma=gamma, lam=lam)


def strided_taus(T: int, steps: int) -> np.ndarray:
    """Descending tau grid for strided DDIM: steps+1 evenly spaced values
    from T down to 0, endpoints included. steps is capped at T (a stride
    finer than one is meaningless)."""
    if steps < 1:
        raise InvalidParameterError("steps must be >= 1")
    steps = min(int(steps), int(T))
    taus = np.rint(np.linspace(T, 0, steps + 1)).astype(np.int64)
    return taus


def _check_latent_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise InvalidInputError(f"latent shape mismatch: {a.shape} vs {b.shape}")


def forward_diffuse(
    x0: np.ndarray, tau: int, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Closed-form forward marginal: sqrt(gamma) * x0 + sqrt(1 - gamma) * eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_latent_pair(x0, eps)
    if not (1 <= tau <= schedule.T):
        raise InvalidInputError(f"tau {tau} outside [1, {schedule.T}]")
    g = schedule.gamma_at(tau)
    return np.sqrt(g) * x0 + np.sqrt(1.0 - g) * eps


def predict_x0(
    x_tau: np.ndarray, eps_hat: np.ndarray, tau: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Clean-sample estimate (x_tau - sqrt(1 - gamma) * eps_hat) / sqrt(gamma)."""
    x_tau = np.asarray(x_tau, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_latent_pair(x_tau, eps_hat)
    if not (1 <= tau <= schedule.T):
        raise InvalidInputError(f"tau {tau} outside [1, {schedule.T}]")
    g = schedule.gamma_at(tau)
    return (x_tau - np.sqrt(1.0 - g) * eps_hat) / np.sqrt(g)


def ddim_step(
    x_tau: np.ndarray,
    eps_hat: np.ndarray,
    tau: int,
    tau_prev: int,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """One deterministic reverse step tau -> tau_prev: re-noise the clean
    prediction to the lower noise level with the same eps_hat."""
    if not (0 <= tau_prev < tau <= schedule.T):
        raise InvalidInputError(
            f"need 0 <= tau_prev < tau <= T, got tau_prev={tau_prev}, tau={tau}"
        )
    x0_hat = predict_x0(x_tau, eps_hat, tau, schedule)
    g_prev = schedule.gamma_at(tau_prev)
    return np.sqrt(g_prev) * x0_hat + np.sqrt(1.0 - g_prev) * np.asarray(
        eps_hat, dtype=np.float64
    )


class Denoiser(ABC):
    """Noise-prediction contract: given a noisy latent, conditioning, the
    diffusion time, and a guidance scale, return the predicted noise with
    the input's shape. Implementations must return finite values for finite
    inputs. The guidance scale is plumbed for conditional denoisers; purely
    analytic implementations may ignore it."""

    @abstractmethod
    def evaluate(
        self, x_tau: np.ndarray, cond, tau: int, guidance_scale: float = 1.0
    ) -> np.ndarray:
        raise NotImplementedError


class Codec(ABC):
    """Latent encode/decode contract mapping frame sequences to latents.

    decode must act frame-wise (frame i of the latent produces frame i of
    the output) and, to be usable inside guided sampling, must be lossless
    and expose an exact vector-Jacobian product via decode_vjp.
    """

    lossless: bool = False
    differentiable: bool = False

    @abstractmethod
    def encode(self, frames: FrameSequence) -> np.ndarray:
        raise NotImplementedError

    @abstractmethod
    def decode(self, latent: np.ndarray) -> np.ndarray:
        """(N, C, H, W) latent -> (N, C, H, W) linear intensities."""
        raise NotImplementedError

    def decode_vjp(self, latent: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. decode's output back to the latent."""
        raise NotImplementedError

    def decode_frames(
        self, latent: np.ndarray, timestamps, log_floor: float = 1e-4
    ) -> FrameSequence:
        """decode plus timestamp bookkeeping, yielding a FrameSequence."""
        return FrameSequence(
            data=self.decode(np.asarray(latent, dtype=np.float64)),
            timestamps=timestamps,
            log_floor=log_floor,
        )


class IdentityCodec(Codec):
    """The default codec: latents are the frames themselves."""

    lossless = True
    differentiable = True

    def encode(self, frames: FrameSequence) -> np.ndarray:
        return frames.data.copy()

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return np.asarray(latent, dtype=np.float64)

    def decode_vjp(self, latent: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        return np.asarray(grad_out, dtype=np.float64)


def training_loss(
    denoiser: Denoiser,
    x0: np.ndarray,
    cond,
    tau: int,
    eps: np.ndarray,
    schedule: NoiseSchedule,
) -> float:
    """Noise-prediction objective: mean squared error between the true noise
    and the denoiser's prediction at the diffused point. Drawing tau uniformly
    over {1..T} is the caller's responsibility."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_latent_pair(x0, eps)
    x_tau = forward_diffuse(x0, tau, eps, schedule)
    eps_hat = denoiser.evaluate(x_tau, cond, tau, 1.0)
    if np.asarray(eps_hat).shape != eps.shape:
        raise InvalidInputError("denoiser output shape mismatch")
    diff = eps - eps_hat
    return float(np.mean(diff * diff))
