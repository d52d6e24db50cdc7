"""Event-guided sampling: event-consistency residuals, the hinge and anchor
losses, and the per-noise-level inner-optimization sampling loop.

The sampler runs strided deterministic reverse diffusion over all frames
jointly. At every noise level it first caches the pre-optimization latents
and one noise prediction per frame; the noise prediction is then held fixed
while, frame by frame in ascending order, a short L-BFGS run nudges the
frame's latent so its decoded clean estimate stays event-consistent with the
previous frame's current decode. Gradients flow through the clean-sample
estimate (a linear map of the latent at fixed noise prediction) and the
codec, never through the denoiser. Frame 0 is never optimized: it provides
the scale/offset anchor the event constraints cascade from.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .diffusion import Codec, Denoiser, NoiseSchedule, ddim_step, strided_taus
from .errors import (
    GuidanceDivergenceError,
    InvalidInputError,
    InvalidParameterError,
    UnsupportedCodecError,
)
from .events import DEFAULT_LOG_FLOOR, LUMINANCE_WEIGHTS, EventStack, FrameSequence
from .lbfgs import LbfgsConfig, lbfgs_minimize
from .rng import substream


@dataclass(frozen=True)
class GuidanceConfig:
    """Knobs for event-guided sampling.

    theta must match the stream the stacks were built from; eta weighs the
    anchor term; inner_steps is the per-level L-BFGS iteration budget.
    channels picks the latent/frame channel count (the stacks are always
    achromatic).
    """

    theta: float
    eta: float = 1.0
    inner_steps: int = 5
    ddim_steps: int = 25
    n_frames: int = 16
    guidance_scale: float = 7.5
    seed: int = 0
    log_floor: float = DEFAULT_LOG_FLOOR
    channels: int = 1

    def __post_init__(self):
        if not (self.theta > 0):
            raise InvalidParameterError("theta must be positive")
        if not (self.eta >= 0):
            raise InvalidParameterError("eta must be non-negative")
        if self.inner_steps < 1:
            raise InvalidParameterError("inner_steps must be >= 1")
        if self.ddim_steps < 1:
            raise InvalidParameterError("ddim_steps must be >= 1")
        if self.n_frames < 2:
            raise InvalidParameterError("n_frames must be >= 2")
        if not (self.log_floor > 0):
            raise InvalidParameterError("log_floor must be positive")
        if self.channels not in (1, 3):
            raise InvalidParameterError("channels must be 1 or 3")


@dataclass(frozen=True)
class ResidualImage:
    """Per-pixel log-consistency residual, stored H x W x C."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise InvalidInputError("residual values must be H x W x C")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("residual values must be finite")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class DiagnosticRecord:
    """One inner-loop summary: losses at the optimized point plus the full
    L-BFGS objective trace for that (tau, frame)."""

    tau: int
    frame: int
    event_loss: float
    anchor_loss: float
    total_loss: float
    trace: tuple[float, ...]


def _luminance(frames: np.ndarray) -> np.ndarray:
    """(N, C, H, W) linear intensity -> (N, H, W) luminance."""
    if frames.shape[1] == 1:
        return frames[:, 0]
    w = np.asarray(LUMINANCE_WEIGHTS)
    return np.tensordot(w, frames, axes=([0], [1]))


def event_distance(
    frame_t: np.ndarray,
    frame_prev: np.ndarray,
    stack: EventStack,
    theta: float,
    log_floor: float = DEFAULT_LOG_FLOOR,
) -> ResidualImage:
    """Log-brightness change between two linear-intensity frames minus the
    event-predicted change. An achromatic stack broadcasts over channels."""
    if not (theta > 0):
        raise InvalidParameterError("theta must be positive")
    a = np.asarray(frame_t, dtype=np.float64)
    b = np.asarray(frame_prev, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"frame shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    elif a.ndim != 3:
        raise InvalidInputError("frames must be (C, H, W) or (H, W)")
    sv = stack.values if isinstance(stack, EventStack) else np.asarray(stack, dtype=np.float64)
    if sv.shape != a.shape[1:]:
        raise InvalidInputError(f"stack shape {sv.shape} does not match frames {a.shape[1:]}")
    d = (
        np.log(np.maximum(a, log_floor))
        - np.log(np.maximum(b, log_floor))
        - theta * sv[None, :, :]
    )
    return ResidualImage(np.moveaxis(d, 0, -1))


def event_loss(d, theta: float) -> float:
    """Mean hinge outside the +-2*theta feasibility band; exactly zero iff
    every entry of the residual lies inside the band."""
    vals = d.values if isinstance(d, ResidualImage) else np.asarray(d, dtype=np.float64)
    return float(np.mean(np.maximum(0.0, np.abs(vals) - 2.0 * theta)))


def anchor_loss(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Mean squared distance to the pre-optimization latent."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise InvalidInputError(f"latent shape mismatch: {x.shape} vs {x_hat.shape}")
    diff = x - x_hat
    return float(np.mean(diff * diff))


def total_loss(event_term: float, anchor_term: float, eta: float) -> float:
    if not (eta >= 0):
        raise InvalidParameterError("eta must be non-negative")
    return float(event_term) + float(eta) * float(anchor_term)


class _FrameObjective:
    """Guidance objective for one frame at one noise level, with its exact
    gradient. All quantities except the frame's own latent are frozen:
    the cached noise prediction, the anchor latent, the previous frame's
    clamped log luminance, and the event stack."""

    def __init__(
        self,
        codec: Codec,
        eps_hat: np.ndarray,
        x_anchor: np.ndarray,
        prev_log: np.ndarray,
        stack_values: np.ndarray,
        gamma: float,
        theta: float,
        eta: float,
        log_floor: float,
    ):
        self.codec = codec
        self.eps = eps_hat  # (1, C, H, W)
        self.x_anchor = x_anchor  # (1, C, H, W)
        self.prev_log = prev_log  # (H, W)
        self.target = prev_log + theta * stack_values  # (H, W)
        self.sq_g = np.sqrt(gamma)
        self.sq_1mg = np.sqrt(1.0 - gamma)
        self.theta = theta
        self.eta = eta
        self.log_floor = log_floor
        self.shape = eps_hat.shape
        self.n_latent = eps_hat.size
        self.n_pix = prev_log.size
        self.channels = self.shape[1]

    def components(self, x_flat: np.ndarray) -> tuple[float, float]:
        """(event hinge, anchor) at a point, without gradients."""
        x = x_flat.reshape(self.shape)
        x0_hat = (x - self.sq_1mg * self.eps) / self.sq_g
        lum = _luminance(self.codec.decode(x0_hat))[0]
        d = np.log(np.maximum(lum, self.log_floor)) - self.target
        ev = float(np.mean(np.maximum(0.0, np.abs(d) - 2.0 * self.theta)))
        diff = x - self.x_anchor
        return ev, float(np.mean(diff * diff))

    def __call__(self, x_flat: np.ndarray) -> tuple[float, np.ndarray]:
        x = x_flat.reshape(self.shape)
        x0_hat = (x - self.sq_1mg * self.eps) / self.sq_g
        decoded = self.codec.decode(x0_hat)
        lum = _luminance(decoded)[0]
        clamped = np.maximum(lum, self.log_floor)
        d = np.log(clamped) - self.target
        hinge = np.abs(d) - 2.0 * self.theta
        viol = hinge > 0
        ev = float(hinge[viol].sum() / self.n_pix) if viol.any() else 0.0
        diff = x - self.x_anchor
        anc = float(np.mean(diff * diff))
        f = ev + self.eta * anc

        # hinge subgradient: zero at the kink and below the clamp floor
        g_d = np.where(viol, np.sign(d) / self.n_pix, 0.0)
        g_lum = np.where(lum > self.log_floor, g_d / clamped, 0.0)
        if self.channels == 1:
            g_decoded = g_lum[None, None, :, :]
        else:
            w = np.asarray(LUMINANCE_WEIGHTS).reshape(1, 3, 1, 1)
            g_decoded = w * g_lum[None, None, :, :]
        g_x0 = self.codec.decode_vjp(x0_hat, g_decoded)
        g_x = g_x0 / self.sq_g + self.eta * (2.0 / self.n_latent) * diff
        return f, g_x.ravel()


def _clamped_log_luminance(
    codec: Codec, x0_hat: np.ndarray, log_floor: float
) -> np.ndarray:
    lum = _luminance(codec.decode(x0_hat))[0]
    return np.log(np.maximum(lum, log_floor))


def egs_sample(
    denoiser: Denoiser,
    codec: Codec,
    stacks: Sequence[EventStack],
    cfg: GuidanceConfig,
    schedule: NoiseSchedule,
    *,
    x_init: np.ndarray | None = None,
    unguided: bool = False,
    collector: Callable[[DiagnosticRecord], None] | None = None,
) -> FrameSequence:
    """Sample a frame sequence from event stacks via guided reverse diffusion.

    stacks must hold cfg.n_frames entries; stacks[0] is index padding only
    (frame 0 has no predecessor) and never constrains anything. Passing
    unguided=True skips every inner loop, giving the plain strided sampler
    with identical randomness. x_init overrides the seeded standard-normal
    start (shape (N, C, H, W)); collector receives one DiagnosticRecord per
    optimized (tau, frame).
    """
    if len(stacks) != cfg.n_frames:
        raise InvalidInputError(
            f"expected {cfg.n_frames} stacks, got {len(stacks)}"
        )
    if not (codec.lossless and codec.differentiable):
        raise UnsupportedCodecError(
            "guided sampling needs a lossless codec with an exact decode vjp"
        )
    h, w = stacks[0].values.shape
    for i, st in enumerate(stacks):
        if st.values.shape != (h, w):
            raise InvalidInputError(f"stack {i} geometry differs: {st.values.shape}")
    t_ends = [st.t_end for st in stacks[1:]]
    if any(b >= a for a, b in zip(t_ends[1:], t_ends[:-1])):
        raise InvalidInputError("stack windows must be in ascending time order")
    timestamps = np.asarray([stacks[1].t_begin] + t_ends, dtype=np.uint64)

    n, c = cfg.n_frames, cfg.channels
    if x_init is not None:
        x = np.array(x_init, dtype=np.float64)
        if x.shape != (n, c, h, w):
            raise InvalidInputError(
                f"x_init shape {x.shape} != {(n, c, h, w)}"
            )
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("x_init must be finite")
    else:
        x = substream(cfg.seed, "sampling").standard_normal((n, c, h, w))

    taus = strided_taus(schedule.T, cfg.ddim_steps)
    inner_cfg = LbfgsConfig(max_iters=cfg.inner_steps)

    for i in range(len(taus) - 1):
        tau, tau_prev = int(taus[i]), int(taus[i + 1])
        g = schedule.gamma_at(tau)
        x_hat = x.copy()
        eps_hat = np.empty_like(x)
        for t in range(n):
            eps_hat[t] = denoiser.evaluate(
                x[t : t + 1], stacks[t].values, tau, cfg.guidance_scale
            )[0]

        prev_log = None
        for t in range(n):
            if t >= 1 and not unguided:
                obj = _FrameObjective(
                    codec=codec,
                    eps_hat=eps_hat[t : t + 1],
                    x_anchor=x_hat[t : t + 1],
                    prev_log=prev_log,
                    stack_values=stacks[t].values,
                    gamma=g,
                    theta=cfg.theta,
                    eta=cfg.eta,
                    log_floor=cfg.log_floor,
                )
                f0, _ = obj(x[t].ravel())
                if not np.isfinite(f0):
                    raise GuidanceDivergenceError(tau, t)
                res = lbfgs_minimize(obj, x[t].ravel(), inner_cfg)
                if not np.all(np.isfinite(res.x)):
                    raise GuidanceDivergenceError(tau, t)
                x[t] = res.x.reshape(c, h, w)
                if collector is not None:
                    ev, anc = obj.components(res.x)
                    collector(
                        DiagnosticRecord(
                            tau=tau,
                            frame=t,
                            event_loss=ev,
                            anchor_loss=anc,
                            total_loss=total_loss(ev, anc, cfg.eta),
                            trace=tuple(res.trace),
                        )
                    )
            if not unguided and t + 1 < n:
                x0_hat = (x[t : t + 1] - np.sqrt(1.0 - g) * eps_hat[t : t + 1]) / np.sqrt(g)
                prev_log = _clamped_log_luminance(codec, x0_hat, cfg.log_floor)
            x[t] = ddim_step(x[t], eps_hat[t], tau, tau_prev, schedule)

    return codec.decode_frames(x, timestamps, cfg.log_floor)
