from __future__ import annotations

import numpy as np
import pytest

from factorvid import (
    GaussianOracleDenoiser,
    GuidanceSpec,
    GuidanceStrategy,
    LatentVideo,
    PredictionKind,
    SamplerConfig,
    ScheduleError,
    TimestepSelection,
    ZeroSignalError,
    ddim_sample,
    ddim_sample_batch,
    default_video_spec,
    extend_video,
    generate_factorized,
    make_empty_conditioning,
)
from factorvid.sampler import SamplingDivergenceError, select_timesteps


def oracle(zt_sched, mu=0.0, sigma2=1.0):
    return GaussianOracleDenoiser(mu, sigma2, zt_sched)


def test_trailing_selection_includes_terminal():
    ts = select_timesteps(1000, 250, TimestepSelection.TRAILING)
    assert ts[0] == 1000
    assert ts[-1] == 4
    assert len(ts) == 250
    assert ts == sorted(ts, reverse=True)
    assert all(a - b == 4 for a, b in zip(ts, ts[1:]))


def test_linspace_selection_spans_both_ends():
    ts = select_timesteps(1000, 250, TimestepSelection.LINSPACE)
    assert ts[0] == 1000
    assert ts[-1] == 1
    assert len(ts) == 250
    assert ts == sorted(ts, reverse=True)
    assert select_timesteps(1000, 1, TimestepSelection.LINSPACE) == [1000]
    assert select_timesteps(1000, 1, TimestepSelection.TRAILING) == [1000]


def test_selection_rejects_too_many_steps():
    with pytest.raises(ScheduleError):
        select_timesteps(100, 101, TimestepSelection.TRAILING)


def test_v_trailing_requires_zero_terminal(quad_sched):
    cfg = SamplerConfig(num_inference_steps=10, seed=0)
    pack = make_empty_conditioning(1, 1, 1, 1)
    den = GaussianOracleDenoiser(0.0, 1.0, quad_sched)
    with pytest.raises(ScheduleError):
        ddim_sample(cfg, quad_sched, den, pack, default_video_spec(), (1, 1, 1, 1))


def test_eps_prediction_fails_at_terminal_step(zt_sched):
    cfg = SamplerConfig(num_inference_steps=10, prediction_kind=PredictionKind.EPS, seed=0)
    pack = make_empty_conditioning(1, 1, 1, 1)
    with pytest.raises(ZeroSignalError):
        ddim_sample(cfg, zt_sched, oracle(zt_sched), pack, default_video_spec(), (1, 1, 1, 1))


def test_one_step_returns_prior_mean_exactly(zt_sched):
    cfg = SamplerConfig(num_inference_steps=1, seed=9)
    pack = make_empty_conditioning(1, 1, 2, 2)
    out = ddim_sample(cfg, zt_sched, oracle(zt_sched, mu=2.0, sigma2=0.25), pack,
                      default_video_spec(), (1, 1, 2, 2))
    assert np.all(out.data == 2.0)


def test_determinism_same_seed_bit_identical(zt_sched):
    cfg = SamplerConfig(num_inference_steps=50, seed=31)
    pack = make_empty_conditioning(2, 1, 3, 3)
    a = ddim_sample(cfg, zt_sched, oracle(zt_sched), pack, default_video_spec(), (2, 1, 3, 3))
    b = ddim_sample(cfg, zt_sched, oracle(zt_sched), pack, default_video_spec(), (2, 1, 3, 3))
    assert np.array_equal(a.data, b.data)
    c = ddim_sample(SamplerConfig(num_inference_steps=50, seed=32), zt_sched,
                    oracle(zt_sched), pack, default_video_spec(), (2, 1, 3, 3))
    assert not np.array_equal(a.data, c.data)


def test_batch_matches_sequential_bitwise(zt_sched):
    cfg = SamplerConfig(num_inference_steps=50, seed=0)
    pack = make_empty_conditioning(1, 1, 2, 2)
    den = oracle(zt_sched, mu=2.0, sigma2=0.25)
    seeds = [3, 14, 159]
    batch = ddim_sample_batch(cfg, zt_sched, den, pack, default_video_spec(), (1, 1, 2, 2), seeds)
    for i, seed in enumerate(seeds):
        single = ddim_sample(SamplerConfig(num_inference_steps=50, seed=seed), zt_sched, den,
                             pack, default_video_spec(), (1, 1, 2, 2))
        assert np.array_equal(batch[i], single.data)


def test_moment_recovery_quick(zt_sched):
    cfg = SamplerConfig(num_inference_steps=250, seed=0)
    pack = make_empty_conditioning(1, 1, 1, 1)
    seeds = [123456 + i for i in range(2000)]
    out = ddim_sample_batch(cfg, zt_sched, oracle(zt_sched, mu=-1.0, sigma2=4.0), pack,
                            default_video_spec(), (1, 1, 1, 1), seeds).ravel()
    assert abs(out.mean() + 1.0) < 3 * 2.0 / np.sqrt(len(seeds))
    assert abs(out.var(ddof=1) / 4.0 - 1.0) < 0.05


def test_step_count_monotonicity(zt_sched):
    """More inference steps never worsen the moment error (same seeds)."""
    pack = make_empty_conditioning(1, 1, 1, 1)
    den = oracle(zt_sched, mu=2.0, sigma2=0.25)
    seeds = list(range(20))
    errors = []
    for steps in (10, 50, 250):
        cfg = SamplerConfig(num_inference_steps=steps, seed=0)
        out = ddim_sample_batch(cfg, zt_sched, den, pack, default_video_spec(), (1, 1, 1, 1), seeds).ravel()
        errors.append(abs(out.var(ddof=1) - 0.25) + abs(out.mean() - 2.0))
    assert errors[0] >= errors[1] >= errors[2] - 1e-12


def test_divergence_diagnostic_carries_step(zt_sched):
    class ExplodingDenoiser:
        def __call__(self, req, out_kind):
            if req.t < 900:
                return LatentVideo(np.full(req.x_t.shape, np.inf))
            return LatentVideo(np.zeros(req.x_t.shape))

    cfg = SamplerConfig(num_inference_steps=20, seed=0)
    pack = make_empty_conditioning(1, 1, 1, 1)
    with pytest.raises(SamplingDivergenceError, match=r"step \d+"):
        ddim_sample(cfg, zt_sched, ExplodingDenoiser(), pack, default_video_spec(), (1, 1, 1, 1))


def test_generate_factorized_structure(zt_sched):
    cfg_image = SamplerConfig(num_inference_steps=25, seed=5)
    cfg_video = SamplerConfig(num_inference_steps=25, seed=6)
    den = oracle(zt_sched, mu=1.0, sigma2=0.5)
    guidance_image = GuidanceSpec(0.0, 7.5, GuidanceStrategy.TEXT_FIRST)
    image, video = generate_factorized(cfg_image, cfg_video, zt_sched, den,
                                       guidance_image, default_video_spec(), (4, 2, 4, 4))
    assert image.shape == (1, 2, 4, 4)
    assert video.shape == (4, 2, 4, 4)
    # deterministic end to end
    image2, video2 = generate_factorized(cfg_image, cfg_video, zt_sched, den,
                                         guidance_image, default_video_spec(), (4, 2, 4, 4))
    assert np.array_equal(image.data, image2.data)
    assert np.array_equal(video.data, video2.data)
    with pytest.raises(ValueError):
        generate_factorized(cfg_image, cfg_video, zt_sched, den,
                            guidance_image, default_video_spec(), (1, 2, 4, 4))


def test_extension_conditions_on_past_frames(zt_sched):
    rng = np.random.default_rng(33)
    past = LatentVideo(rng.standard_normal((16, 2, 2, 2)))
    cfg = SamplerConfig(num_inference_steps=10, seed=4)
    out = extend_video(cfg, zt_sched, oracle(zt_sched), default_video_spec(), past, 32)
    assert out.shape == (32, 2, 2, 2)
    # the pack the extension builds has mask 1 exactly on the past frames
    from factorvid import make_past_frames_conditioning

    pack = make_past_frames_conditioning(past, 32)
    flags = pack.frame_mask[:, 0, 0, 0]
    assert np.all(flags[:16] == 1.0) and np.all(flags[16:] == 0.0)


def test_pack_shape_must_match_request(zt_sched):
    cfg = SamplerConfig(num_inference_steps=5, seed=0)
    pack = make_empty_conditioning(2, 1, 2, 2)
    with pytest.raises(ValueError):
        ddim_sample(cfg, zt_sched, oracle(zt_sched), pack, default_video_spec(), (3, 1, 2, 2))
