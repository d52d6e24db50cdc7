"""Closed-form denoiser over isotropic Gaussian-mixture priors.

Under the forward marginal x_tau = sqrt(g) x0 + sqrt(1-g) eps with x0 drawn
from a mixture of N(mu_i, s2 I), the diffused density at time tau is again a
mixture, with component means sqrt(g) mu_i and shared isotropic variance
g * s2 + 1 - g. Both the posterior mean E[x0 | x_tau] and the matching noise
prediction are exact, which makes this prior a verification oracle for the
sampler: no training, no approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import Denoiser, NoiseSchedule
from .errors import InvalidInputError, InvalidParameterError


@dataclass(frozen=True)
class GaussianMixture:
    """weights: (k,) positive, summing to 1; means: (k, d); sigma2 >= 0 shared."""

    weights: np.ndarray
    means: np.ndarray
    sigma2: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 1:
            raise InvalidInputError("means must be a (k, d) array")
        if weights.shape != (means.shape[0],):
            raise InvalidInputError("weights must be a (k,) vector matching means")
        if not np.all(weights > 0):
            raise InvalidInputError("weights must be positive")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise InvalidInputError("weights must sum to 1 within 1e-12")
        if not np.all(np.isfinite(means)):
            raise InvalidInputError("means must be finite")
        if not (self.sigma2 >= 0):
            raise InvalidParameterError("sigma2 must be non-negative")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, tuple]:
    """View x as (B, d) rows: a 1-D input is one sample, otherwise axis 0 is
    the batch axis and the remaining axes must flatten to the mixture dim."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise InvalidInputError(f"latent dim {x.shape[0]} != mixture dim {dim}")
        return x.reshape(1, dim), x.shape
    per_item = int(np.prod(x.shape[1:]))
    if per_item != dim:
        raise InvalidInputError(
            f"flattened latent dim {per_item} != mixture dim {dim}"
        )
    return x.reshape(-1, dim), x.shape


def gmm_posterior_x0(
    x_tau: np.ndarray, tau: int, schedule: NoiseSchedule, gmm: GaussianMixture
) -> np.ndarray:
    """Exact E[x0 | x_tau]: responsibility-weighted per-component posterior
    means, with log-sum-exp stabilized responsibilities."""
    if not (0 <= tau <= schedule.T):
        raise InvalidInputError(f"tau {tau} outside [0, {schedule.T}]")
    xb, shape = _as_batch(x_tau, gmm.dim)
    g = schedule.gamma_at(tau)
    s2 = g * gmm.sigma2 + 1.0 - g
    sq_g = np.sqrt(g)

    if gmm.k == 1:
        resp = np.ones((xb.shape[0], 1))
    else:
        if s2 <= 0:
            raise InvalidInputError(
                "zero observation noise (tau = 0 with sigma2 = 0) makes "
                "responsibilities degenerate"
            )
        diff = xb[:, None, :] - sq_g * gmm.means[None, :, :]
        logits = np.log(gmm.weights)[None, :] - np.sum(diff * diff, axis=2) / (2.0 * s2)
        logits -= logits.max(axis=1, keepdims=True)
        resp = np.exp(logits)
        resp /= resp.sum(axis=1, keepdims=True)

    if gmm.sigma2 == 0.0:
        post = resp @ gmm.means
    else:
        # per-component posterior mean: mu_i + (sqrt(g) s2_prior / s2) (x - sqrt(g) mu_i)
        coef = sq_g * gmm.sigma2 / s2
        mu_post = gmm.means[None, :, :] + coef * (
            xb[:, None, :] - sq_g * gmm.means[None, :, :]
        )
        post = np.sum(resp[:, :, None] * mu_post, axis=1)
    return post.reshape(shape)


def gmm_epsilon(
    x_tau: np.ndarray, tau: int, schedule: NoiseSchedule, gmm: GaussianMixture
) -> np.ndarray:
    """Noise prediction consistent with the posterior mean: the eps_hat for
    which the clean-sample estimate equals E[x0 | x_tau]."""
    if tau == 0:
        raise InvalidInputError("gmm_epsilon undefined at tau = 0 (zero noise scale)")
    if not (1 <= tau <= schedule.T):
        raise InvalidInputError(f"tau {tau} outside [1, {schedule.T}]")
    x = np.asarray(x_tau, dtype=np.float64)
    post = gmm_posterior_x0(x, tau, schedule, gmm)
    g = schedule.gamma_at(tau)
    return (x - np.sqrt(g) * post) / np.sqrt(1.0 - g)


def sample_gmm(gmm: GaussianMixture, seed: int, n: int = 1) -> np.ndarray:
    """Draw n samples: component by weights, then an isotropic Gaussian.
    Returns (n, d); deterministic per seed."""
    rng = np.random.default_rng(seed)
    comps = rng.choice(gmm.k, size=n, p=gmm.weights)
    noise = rng.standard_normal((n, gmm.dim))
    return gmm.means[comps] + np.sqrt(gmm.sigma2) * noise


class GmmDenoiser(Denoiser):
    """Denoiser adapter over a GaussianMixture. Treats each frame of an
    (N, C, H, W) latent as an independent draw from the mixture; ignores
    conditioning and guidance scale (the prior is unconditional)."""

    def __init__(self, gmm: GaussianMixture, schedule: NoiseSchedule):
        self.gmm = gmm
        self.schedule = schedule

    def evaluate(
        self, x_tau: np.ndarray, cond, tau: int, guidance_scale: float = 1.0
    ) -> np.ndarray:
        x = np.asarray(x_tau, dtype=np.float64)
        flat = x.reshape(x.shape[0], -1)
        out = gmm_epsilon(flat, tau, self.schedule, self.gmm)
        return out.reshape(x.shape)
