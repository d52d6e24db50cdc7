import numpy as np
import pytest

from event_diffusion import (
    EventStack,
    GaussianMixture,
    GmmDenoiser,
    GuidanceConfig,
    IdentityCodec,
    InvalidInputError,
    UnsupportedCodecError,
    anchor_loss,
    build_schedule,
    egs_sample,
    event_distance,
    event_loss,
    integrate_stack,
    simulate_events,
    total_loss,
)
from event_diffusion.guidance import _FrameObjective
from conftest import make_blob_video


def zero_stacks(n, h, w):
    return [EventStack(i, i + 1, np.zeros((h, w))) for i in range(n)]


def test_event_distance_definition():
    rng = np.random.default_rng(0)
    h = w = 5
    cur = rng.uniform(0.2, 1.0, size=(h, w))
    prev = rng.uniform(0.2, 1.0, size=(h, w))
    counts = rng.integers(-3, 4, size=(h, w)).astype(float)
    theta = 0.15
    r = event_distance(cur, prev, counts, theta)
    want = np.log(cur) - np.log(prev) - theta * counts
    assert np.allclose(r.values[:, :, 0], want, atol=1e-12)


def test_event_distance_clamps_at_log_floor():
    cur = np.array([[1e-9]])
    prev = np.array([[0.5]])
    r = event_distance(cur, prev, np.zeros((1, 1)), 0.2, log_floor=1e-4)
    assert np.isclose(r.values[0, 0, 0], np.log(1e-4) - np.log(0.5))


def test_event_loss_hinge():
    theta = 0.2
    # residuals: one inside the band, one at the edge, two outside
    d = np.array([[[0.1]], [[0.4]], [[0.65]], [[-0.9]]])
    loss = event_loss(d, theta)
    want = (0.0 + 0.0 + 0.25 + 0.5) / 4
    assert np.isclose(loss, want, atol=1e-12)


def test_event_loss_zero_inside_band():
    rng = np.random.default_rng(1)
    d = rng.uniform(-0.4, 0.4, size=(6, 6, 1))
    assert event_loss(d, 0.2) == 0.0


def test_scale_invariance_of_event_loss():
    # multiplying both frames by one positive constant leaves d unchanged
    rng = np.random.default_rng(2)
    theta = 0.2
    for _ in range(100):
        cur = rng.uniform(0.1, 1.0, size=(6, 6))
        prev = rng.uniform(0.1, 1.0, size=(6, 6))
        counts = rng.integers(-2, 3, size=(6, 6)).astype(float)
        scale = rng.uniform(0.5, 2.0)
        base = event_loss(event_distance(cur, prev, counts, theta), theta)
        scaled = event_loss(
            event_distance(scale * cur, scale * prev, counts, theta), theta
        )
        assert abs(base - scaled) < 1e-9


def test_anchor_and_total_loss():
    a = np.ones((2, 4))
    b = np.zeros((2, 4))
    assert np.isclose(anchor_loss(a, b), 1.0)
    assert np.isclose(total_loss(0.3, 0.5, eta=2.0), 1.3)
    with pytest.raises(Exception):
        total_loss(0.3, 0.5, eta=-1.0)


def test_frame_objective_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    h = w = 4
    gamma = 0.6
    theta = 0.2
    obj = _FrameObjective(
        codec=IdentityCodec(),
        eps_hat=rng.normal(size=(1, 1, h, w)),
        x_anchor=rng.normal(size=(1, 1, h, w)),
        prev_log=rng.uniform(-1.5, -0.5, size=(h, w)),
        stack_values=rng.integers(-2, 3, size=(h, w)).astype(float),
        gamma=gamma,
        theta=theta,
        eta=0.7,
        log_floor=1e-4,
    )
    # build the probe from a controlled clean image so the decode is positive
    # and every residual sits away from the hinge kinks and the log floor
    x = None
    for attempt in range(200):
        x0_target = rng.uniform(0.3, 1.2, size=(1, 1, h, w))
        d = np.log(x0_target[0, 0]) - obj.target
        if np.abs(np.abs(d) - 2 * theta).min() > 2e-2:
            x = (np.sqrt(gamma) * x0_target
                 + np.sqrt(1 - gamma) * obj.eps).ravel()
            break
    assert x is not None
    f0, g = obj(x)
    num = np.zeros_like(x)
    eps_fd = 1e-6
    for i in range(x.size):
        xp = x.copy(); xp[i] += eps_fd
        xm = x.copy(); xm[i] -= eps_fd
        num[i] = (obj(xp)[0] - obj(xm)[0]) / (2 * eps_fd)
    assert np.abs(g - num).max() < 1e-6 * max(1.0, np.abs(num).max())


def test_egs_requires_lossless_differentiable_codec():
    class BadCodec(IdentityCodec):
        lossless = False

    sch = build_schedule(10)
    gmm = GaussianMixture(weights=np.array([1.0]), means=np.full((1, 4), 0.5),
                          sigma2=0.0)
    cfg = GuidanceConfig(theta=0.2, n_frames=3, ddim_steps=5)
    with pytest.raises(UnsupportedCodecError):
        egs_sample(GmmDenoiser(gmm, sch), BadCodec(), zero_stacks(3, 2, 2),
                   cfg, sch)


def test_egs_validates_stack_count():
    sch = build_schedule(10)
    gmm = GaussianMixture(weights=np.array([1.0]), means=np.full((1, 4), 0.5),
                          sigma2=0.0)
    cfg = GuidanceConfig(theta=0.2, n_frames=4, ddim_steps=5)
    with pytest.raises(InvalidInputError):
        egs_sample(GmmDenoiser(gmm, sch), IdentityCodec(), zero_stacks(3, 2, 2),
                   cfg, sch)


def test_egs_zero_events_eta_zero_matches_unguided_exactly():
    # point prior: every intermediate decode is the mode, so the event term
    # is identically zero and the optimizer never moves the latents
    h = w = 6
    n = 4
    sch = build_schedule(1000)
    gmm = GaussianMixture(weights=np.array([1.0]),
                          means=np.full((1, h * w), 0.5), sigma2=0.0)
    den = GmmDenoiser(gmm, sch)
    cfg = GuidanceConfig(theta=0.2, eta=0.0, n_frames=n, ddim_steps=10,
                         inner_steps=5, seed=42)
    guided = egs_sample(den, IdentityCodec(), zero_stacks(n, h, w), cfg, sch)
    unguided = egs_sample(den, IdentityCodec(), zero_stacks(n, h, w), cfg, sch,
                          unguided=True)
    assert np.array_equal(guided.data, unguided.data)


def test_egs_frame_zero_identical_guided_or_not():
    fr = make_blob_video(4, 8, 8)
    sch = build_schedule(1000)
    stream = simulate_events(fr, 0.2, seed=0)
    stacks = integrate_stack(stream, fr.timestamps.astype(np.int64))
    pad = EventStack(-1, 0, np.zeros((8, 8)))
    means = fr.data[:, 0].reshape(4, -1)
    gmm = GaussianMixture(weights=np.full(4, 0.25), means=means, sigma2=0.01)
    den = GmmDenoiser(gmm, sch)
    cfg = GuidanceConfig(theta=0.2, n_frames=4, ddim_steps=8, inner_steps=3,
                         seed=5)
    guided = egs_sample(den, IdentityCodec(), [pad] + stacks, cfg, sch)
    unguided = egs_sample(den, IdentityCodec(), [pad] + stacks, cfg, sch,
                          unguided=True)
    assert np.array_equal(guided.data[0], unguided.data[0])
    assert not np.array_equal(guided.data[1:], unguided.data[1:])


def test_egs_deterministic_per_seed():
    fr = make_blob_video(3, 6, 6)
    sch = build_schedule(500)
    stream = simulate_events(fr, 0.2, seed=0)
    stacks = integrate_stack(stream, fr.timestamps.astype(np.int64))
    pad = EventStack(-1, 0, np.zeros((6, 6)))
    means = fr.data[:, 0].reshape(3, -1)
    gmm = GaussianMixture(weights=np.full(3, 1 / 3), means=means, sigma2=0.02)
    den = GmmDenoiser(gmm, sch)
    cfg = GuidanceConfig(theta=0.2, n_frames=3, ddim_steps=6, inner_steps=2,
                         seed=9)
    a = egs_sample(den, IdentityCodec(), [pad] + stacks, cfg, sch)
    b = egs_sample(den, IdentityCodec(), [pad] + stacks, cfg, sch)
    assert np.array_equal(a.data, b.data)
    c = egs_sample(den, IdentityCodec(), [pad] + stacks,
                   GuidanceConfig(theta=0.2, n_frames=3, ddim_steps=6,
                                  inner_steps=2, seed=10), sch)
    assert not np.array_equal(a.data, c.data)


def test_egs_collector_receives_monotone_traces():
    fr = make_blob_video(3, 6, 6)
    sch = build_schedule(500)
    stream = simulate_events(fr, 0.2, seed=0)
    stacks = integrate_stack(stream, fr.timestamps.astype(np.int64))
    pad = EventStack(-1, 0, np.zeros((6, 6)))
    means = fr.data[:, 0].reshape(3, -1)
    gmm = GaussianMixture(weights=np.full(3, 1 / 3), means=means, sigma2=0.02)
    records = []
    cfg = GuidanceConfig(theta=0.2, n_frames=3, ddim_steps=6, inner_steps=4,
                         seed=1)
    egs_sample(GmmDenoiser(gmm, sch), IdentityCodec(), [pad] + stacks, cfg,
               sch, collector=records.append)
    assert len(records) == 6 * 2  # (frames - 1) per strided step
    for rec in records:
        assert 1 <= rec.frame <= 2
        trace = np.array(rec.trace)
        assert np.all(np.diff(trace) <= 1e-12)
        assert np.isclose(rec.total_loss,
                          rec.event_loss + cfg.eta * rec.anchor_loss,
                          atol=1e-9)


def test_egs_x_init_override():
    h = w = 5
    n = 3
    sch = build_schedule(100)
    gmm = GaussianMixture(weights=np.array([1.0]),
                          means=np.full((1, h * w), 0.4), sigma2=0.01)
    den = GmmDenoiser(gmm, sch)
    cfg = GuidanceConfig(theta=0.2, n_frames=n, ddim_steps=5, inner_steps=2,
                         seed=3)
    x_init = np.random.default_rng(8).standard_normal((n, 1, h, w))
    a = egs_sample(den, IdentityCodec(), zero_stacks(n, h, w), cfg, sch,
                   x_init=x_init, unguided=True)
    b = egs_sample(den, IdentityCodec(), zero_stacks(n, h, w), cfg, sch,
                   x_init=x_init, unguided=True)
    assert np.array_equal(a.data, b.data)
    with pytest.raises(InvalidInputError):
        egs_sample(den, IdentityCodec(), zero_stacks(n, h, w), cfg, sch,
                   x_init=np.zeros((n, 1, h, w + 1)))
