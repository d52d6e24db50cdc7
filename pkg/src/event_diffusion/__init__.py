"""Event-camera simulation and diffusion-based video reconstruction."""

from .diffusion import (
    Codec,
    Denoiser,
    IdentityCodec,
    NoiseSchedule,
    build_schedule,
    ddim_step,
    forward_diffuse,
    predict_x0,
    strided_taus,
    training_loss,
)
from .errors import (
    EventDiffusionError,
    GuidanceDivergenceError,
    InvalidInputError,
    InvalidParameterError,
    UnsupportedCodecError,
)
from .events import (
    EVENT_DTYPE,
    Event,
    EventStack,
    EventStream,
    FrameSequence,
    augment_events,
    integrate_stack,
    pack_events,
    reconstruct_direct,
    simulate_events,
    sort_events,
)
from .gmm import (
    GaussianMixture,
    GmmDenoiser,
    gmm_epsilon,
    gmm_posterior_x0,
    sample_gmm,
)
from .guidance import (
    DiagnosticRecord,
    GuidanceConfig,
    ResidualImage,
    anchor_loss,
    egs_sample,
    event_distance,
    event_loss,
    total_loss,
)
from .lbfgs import LbfgsConfig, LbfgsResult, lbfgs_minimize
from .metrics import consistency_rate, psnr
from .rng import substream

__version__ = "0.1.0"

__all__ = [
    "EVENT_DTYPE",
    "Codec",
    "Denoiser",
    "DiagnosticRecord",
    "Event",
    "EventDiffusionError",
    "EventStack",
    "EventStream",
    "FrameSequence",
    "GaussianMixture",
    "GmmDenoiser",
    "GuidanceConfig",
    "GuidanceDivergenceError",
    "IdentityCodec",
    "InvalidInputError",
    "InvalidParameterError",
    "LbfgsConfig",
    "LbfgsResult",
    "NoiseSchedule",
    "ResidualImage",
    "UnsupportedCodecError",
    "anchor_loss",
    "augment_events",
    "build_schedule",
    "consistency_rate",
    "ddim_step",
    "egs_sample",
    "event_distance",
    "event_loss",
    "forward_diffuse",
    "gmm_epsilon",
    "gmm_posterior_x0",
    "integrate_stack",
    "lbfgs_minimize",
    "pack_events",
    "predict_x0",
    "psnr",
    "reconstruct_direct",
    "sample_gmm",
    "simulate_events",
    "sort_events",
    "strided_taus",
    "substream",
    "total_loss",
    "training_loss",
]
