import numpy as np
import pytest

from event_diffusion import (
    GaussianMixture,
    GmmDenoiser,
    InvalidInputError,
    InvalidParameterError,
    build_schedule,
    forward_diffuse,
    sample_gmm,
)
from event_diffusion.gmm import gmm_epsilon, gmm_posterior_x0


def test_mixture_validation():
    with pytest.raises(InvalidInputError):
        GaussianMixture(weights=np.array([0.5, 0.4]),
                        means=np.zeros((2, 3)), sigma2=1.0)
    with pytest.raises(InvalidInputError):
        GaussianMixture(weights=np.array([1.0]), means=np.zeros((2, 3)),
                        sigma2=1.0)
    with pytest.raises(InvalidParameterError):
        GaussianMixture(weights=np.array([1.0]), means=np.zeros((1, 3)),
                        sigma2=-0.5)


def test_single_component_posterior_is_gaussian_formula():
    # for k=1 the posterior mean has the closed form
    # mu + sqrt(g) s2 / (g s2 + 1 - g) * (x - sqrt(g) mu)
    rng = np.random.default_rng(0)
    d = 6
    mu = rng.normal(size=d)
    s2 = 0.7
    gmm = GaussianMixture(weights=np.array([1.0]), means=mu[None], sigma2=s2)
    sch = build_schedule(100)
    x = rng.normal(size=(3, d))
    for tau in (1, 40, 100):
        g = sch.gamma_at(tau)
        denom = g * s2 + 1 - g
        want = mu + np.sqrt(g) * s2 / denom * (x - np.sqrt(g) * mu)
        post = gmm_posterior_x0(x, tau, sch, gmm)
        assert np.allclose(post, want, atol=1e-12)


def test_posterior_matches_numerical_integration():
    # 1-D two-component mixture: check E[x0 | x_tau] against quadrature
    sch = build_schedule(50)
    gmm = GaussianMixture(weights=np.array([0.3, 0.7]),
                          means=np.array([[-1.0], [2.0]]), sigma2=0.4)
    grid = np.linspace(-8, 10, 20001)
    dx = grid[1] - grid[0]
    prior = (0.3 * np.exp(-((grid + 1.0) ** 2) / 0.8)
             + 0.7 * np.exp(-((grid - 2.0) ** 2) / 0.8))
    for tau in (5, 25, 50):
        g = sch.gamma_at(tau)
        for x_tau in (-1.5, 0.2, 3.0):
            like = np.exp(-((x_tau - np.sqrt(g) * grid) ** 2) / (2 * (1 - g)))
            w = prior * like
            want = (grid * w).sum() / w.sum()
            post = gmm_posterior_x0(np.array([[x_tau]]), tau, sch, gmm)
            assert np.isclose(post[0, 0], want, atol=1e-6), (tau, x_tau)


def test_symmetric_mixture_posterior_at_origin_is_zero():
    sch = build_schedule(100)
    gmm = GaussianMixture(weights=np.array([0.5, 0.5]),
                          means=np.array([[-4.0, 0.0], [4.0, 0.0]]), sigma2=0.1)
    post = gmm_posterior_x0(np.zeros((1, 2)), 60, sch, gmm)
    assert np.allclose(post, 0.0, atol=1e-12)


def test_far_field_point_saturates_to_nearest_component():
    sch = build_schedule(100)
    gmm = GaussianMixture(weights=np.array([0.5, 0.5]),
                          means=np.array([[-4.0, 0.0], [4.0, 0.0]]), sigma2=0.1)
    x = np.array([[500.0, 0.1]])
    post = gmm_posterior_x0(x, 1, sch, gmm)
    assert np.all(np.isfinite(post))
    g = sch.gamma_at(1)
    s2 = g * 0.1 + 1 - g
    only2 = gmm.means[1] + np.sqrt(g) * 0.1 / s2 * (x - np.sqrt(g) * gmm.means[1])
    assert np.allclose(post, only2, atol=1e-9)


def test_epsilon_consistent_with_posterior():
    # eps = (x - sqrt(g) post) / sqrt(1 - g) by definition
    rng = np.random.default_rng(1)
    sch = build_schedule(80)
    gmm = GaussianMixture(weights=np.array([0.2, 0.8]),
                          means=rng.normal(size=(2, 5)), sigma2=0.3)
    x = rng.normal(size=(4, 5))
    tau = 33
    g = sch.gamma_at(tau)
    post = gmm_posterior_x0(x, tau, sch, gmm)
    eps = gmm_epsilon(x, tau, sch, gmm)
    assert np.allclose(np.sqrt(g) * post + np.sqrt(1 - g) * eps, x, atol=1e-12)


def test_epsilon_rejects_tau_zero():
    sch = build_schedule(10)
    gmm = GaussianMixture(weights=np.array([1.0]), means=np.zeros((1, 2)),
                          sigma2=1.0)
    with pytest.raises(InvalidInputError):
        gmm_epsilon(np.zeros((1, 2)), 0, sch, gmm)


def test_point_prior_recovers_mean_exactly():
    # sigma2 = 0 collapses the posterior onto the single mean
    sch = build_schedule(100)
    mu = np.array([0.3, -1.2, 0.9])
    gmm = GaussianMixture(weights=np.array([1.0]), means=mu[None], sigma2=0.0)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3))
    for tau in (1, 50, 100):
        post = gmm_posterior_x0(x, tau, sch, gmm)
        assert np.allclose(post, mu, atol=1e-12)


def test_posterior_x0_error_shrinks_as_noise_fades():
    # at low noise the posterior mean pins down x0; at full noise it cannot
    sch = build_schedule(1000)
    rng = np.random.default_rng(3)
    d = 8
    gmm = GaussianMixture(weights=np.array([0.5, 0.5]),
                          means=rng.normal(scale=3.0, size=(2, d)), sigma2=0.05)
    x0 = sample_gmm(gmm, seed=4, n=64)
    eps = rng.standard_normal((64, d))
    errs = {}
    for tau in (5, 1000):
        x_tau = forward_diffuse(x0, tau, eps, sch)
        post = gmm_posterior_x0(x_tau, tau, sch, gmm)
        errs[tau] = np.sqrt(np.mean((post - x0) ** 2))
    assert errs[5] < 0.2 * errs[1000]


def test_denoiser_reshapes_latents():
    sch = build_schedule(20)
    gmm = GaussianMixture(weights=np.array([1.0]), means=np.zeros((1, 12)),
                          sigma2=1.0)
    den = GmmDenoiser(gmm, sch)
    x = np.random.default_rng(5).normal(size=(2, 3, 2, 2))
    out = den.evaluate(x, None, 10)
    assert out.shape == x.shape
    flat = gmm_epsilon(x.reshape(2, 12), 10, sch, gmm)
    assert np.array_equal(out, flat.reshape(x.shape))


def test_sample_gmm_statistics():
    mu = np.array([[-2.0, 1.0], [2.0, -1.0]])
    gmm = GaussianMixture(weights=np.array([0.25, 0.75]), means=mu, sigma2=0.09)
    draws = sample_gmm(gmm, seed=6, n=40_000)
    want_mean = 0.25 * mu[0] + 0.75 * mu[1]
    assert np.allclose(draws.mean(axis=0), want_mean, atol=0.03)
    # component shares recover the weights
    near0 = np.linalg.norm(draws - mu[0], axis=1) < 1.0
    assert abs(near0.mean() - 0.25) < 0.01


def test_sample_gmm_deterministic():
    gmm = GaussianMixture(weights=np.array([0.5, 0.5]),
                          means=np.array([[0.0], [5.0]]), sigma2=1.0)
    a = sample_gmm(gmm, seed=7, n=100)
    b = sample_gmm(gmm, seed=7, n=100)
    assert np.array_equal(a, b)
