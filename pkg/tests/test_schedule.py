from __future__ import annotations

import json

import numpy as np
import pytest

from factorvid import (
    LatentVideo,
    NoiseSchedule,
    PredictionKind,
    ScheduleError,
    ZeroSignalError,
    build_quad_schedule,
    convert_prediction,
    rescale_zero_terminal_snr,
    snr,
)
from factorvid.schedule import load_schedule, save_schedule

# Frozen from a 60-digit cumulative-product oracle over the quad betas
# (independent of the float64 cumprod path under test).
GOLDEN_S_500 = 0.5269436881266041
GOLDEN_S_1000 = 0.06826491421716752
GOLDEN_RESCALED_S_500 = 0.4922998746253602
GOLDEN_SNR_1 = 1175.4705882352942


def scalar_latent(value: float) -> LatentVideo:
    return LatentVideo(np.full((1, 1, 1, 1), float(value)))


def toy_schedule(s1: float, n1: float) -> NoiseSchedule:
    s2 = s1 / 2
    return NoiseSchedule(
        num_steps=2,
        signal_coef=np.array([s1, s2]),
        noise_coef=np.array([n1, np.sqrt(1 - s2 * s2)]),
        zero_terminal=False,
        schedule_kind="quad",
        beta_start=1e-3,
        beta_end=1e-2,
    )


def test_quad_schedule_beta_endpoints(quad_sched):
    # betas are recoverable from consecutive cumulative products
    s2 = quad_sched.signal_coef**2
    beta_1 = 1.0 - s2[0]
    beta_n = 1.0 - s2[-1] / s2[-2]
    assert beta_1 == pytest.approx(8.5e-4, rel=1e-12)
    assert beta_n == pytest.approx(1.2e-2, rel=1e-12)


def test_quad_schedule_rejects_bad_betas():
    with pytest.raises(ScheduleError):
        build_quad_schedule(2, 0.1, 0.1)
    with pytest.raises(ScheduleError):
        build_quad_schedule(2, 0.2, 0.1)
    with pytest.raises(ScheduleError):
        build_quad_schedule(2, 0.0, 0.1)
    with pytest.raises(ScheduleError):
        build_quad_schedule(2, 0.1, 1.0)
    with pytest.raises(ScheduleError):
        build_quad_schedule(1, 8.5e-4, 1.2e-2)


def test_quad_schedule_golden_midpoint(quad_sched):
    assert quad_sched.signal(500) == pytest.approx(GOLDEN_S_500, rel=5e-13)
    assert quad_sched.signal(1000) == pytest.approx(GOLDEN_S_1000, rel=5e-13)


def test_schedule_monotone_and_variance_preserving(quad_sched, zt_sched):
    for sched in (quad_sched, zt_sched):
        s, n = sched.signal_coef, sched.noise_coef
        assert np.all(np.diff(s) < 0)
        assert np.all(np.diff(n) > 0)
        assert np.max(np.abs(s**2 + n**2 - 1.0)) < 1e-12


def test_rescale_endpoints(quad_sched, zt_sched):
    assert zt_sched.signal(1000) == 0.0
    assert zt_sched.noise(1000) == 1.0
    assert abs(zt_sched.signal(1) - quad_sched.signal(1)) < 1e-12
    assert snr(quad_sched, 1000) > 0.0  # the train/test gap is visible pre-rescale
    assert snr(zt_sched, 1000) == 0.0


def test_rescale_golden_midpoint(zt_sched):
    assert zt_sched.signal(500) == pytest.approx(GOLDEN_RESCALED_S_500, rel=5e-13)


def test_rescale_rejects_double_application(zt_sched):
    with pytest.raises(ScheduleError):
        rescale_zero_terminal_snr(zt_sched)


def test_snr_golden_first_step(quad_sched):
    assert snr(quad_sched, 1) == pytest.approx(GOLDEN_SNR_1, rel=1e-11)


def test_snr_monotone_nonincreasing(quad_sched, zt_sched):
    for sched in (quad_sched, zt_sched):
        values = [snr(sched, t) for t in range(1, sched.num_steps + 1)]
        assert all(a >= b for a, b in zip(values, values[1:]))


def test_snr_symmetric_point():
    sched = toy_schedule(2**-0.5, 2**-0.5)
    assert snr(sched, 1) == pytest.approx(1.0, rel=1e-12)


def test_snr_infinity_sentinel():
    sched = toy_schedule(1.0, 0.0)
    assert snr(sched, 1) == np.inf


def test_snr_rejects_out_of_range(quad_sched):
    with pytest.raises(ScheduleError):
        snr(quad_sched, 0)
    with pytest.raises(ScheduleError):
        snr(quad_sched, 1001)


def test_convert_v_worked_example():
    sched = toy_schedule(0.6, 0.8)
    x0, eps = convert_prediction(sched, 1, scalar_latent(1.0), scalar_latent(0.5), PredictionKind.V)
    assert x0.data.item() == pytest.approx(0.2, abs=1e-15)
    assert eps.data.item() == pytest.approx(1.1, abs=1e-15)
    assert 0.6 * x0.data.item() + 0.8 * eps.data.item() == pytest.approx(1.0, abs=1e-15)


def test_convert_rejects_shape_mismatch(quad_sched):
    x = LatentVideo(np.zeros((1, 1, 2, 2)))
    p = LatentVideo(np.zeros((1, 1, 2, 3)))
    with pytest.raises(ValueError):
        convert_prediction(quad_sched, 1, x, p, PredictionKind.V)


def test_convert_x0_rejects_zero_noise():
    sched = toy_schedule(1.0, 0.0)
    x = scalar_latent(1.0)
    with pytest.raises(ZeroSignalError):
        convert_prediction(sched, 1, x, x, PredictionKind.X0)


def test_convert_eps_rejects_zero_terminal(zt_sched):
    x = scalar_latent(1.0)
    with pytest.raises(ZeroSignalError):
        convert_prediction(zt_sched, 1000, x, x, PredictionKind.EPS)


def test_reconstruction_identity_random_trials(zt_sched):
    rng = np.random.default_rng(7)
    shape = (2, 1, 2, 2)
    for _ in range(1000):
        t = int(rng.integers(1, 1001))
        x_t = LatentVideo(rng.standard_normal(shape))
        pred = LatentVideo(rng.standard_normal(shape))
        kind = [PredictionKind.V, PredictionKind.EPS, PredictionKind.X0][int(rng.integers(3))]
        if kind is PredictionKind.EPS and zt_sched.signal(t) == 0.0:
            continue
        x0, eps = convert_prediction(zt_sched, t, x_t, pred, kind)
        s, n = zt_sched.signal(t), zt_sched.noise(t)
        recon = s * x0.data + n * eps.data
        assert np.max(np.abs(recon - x_t.data)) < 1e-10


def test_v_round_trip(quad_sched):
    rng = np.random.default_rng(21)
    for _ in range(200):
        t = int(rng.integers(1, 1001))
        x_t = LatentVideo(rng.standard_normal((1, 2, 3, 3)))
        v = LatentVideo(rng.standard_normal((1, 2, 3, 3)))
        x0, eps = convert_prediction(quad_sched, t, x_t, v, PredictionKind.V)
        s, n = quad_sched.signal(t), quad_sched.noise(t)
        v_back = s * eps.data - n * x0.data
        assert np.max(np.abs(v_back - v.data)) < 1e-10


def test_schedule_json_golden_file():
    import pathlib

    golden = pathlib.Path(__file__).parent / "golden" / "schedule_quad8.json"
    sched = rescale_zero_terminal_snr(build_quad_schedule(8, 1e-3, 2e-2))
    loaded = load_schedule(golden)
    assert loaded.num_steps == sched.num_steps
    assert np.array_equal(loaded.signal_coef, sched.signal_coef)
    assert np.array_equal(loaded.noise_coef, sched.noise_coef)


def test_schedule_json_round_trip(tmp_path, zt_sched):
    path = tmp_path / "sched.json"
    save_schedule(zt_sched, path)
    loaded = load_schedule(path)
    assert loaded.num_steps == zt_sched.num_steps
    assert loaded.zero_terminal is True
    assert loaded.schedule_kind == "quad"
    assert loaded.beta_start == zt_sched.beta_start
    assert np.array_equal(loaded.signal_coef, zt_sched.signal_coef)
    assert np.array_equal(loaded.noise_coef, zt_sched.noise_coef)
    doc = json.loads(path.read_text())
    assert set(doc) == {
        "num_steps", "beta_start", "beta_end", "schedule_kind", "zero_terminal",
        "signal_coef", "noise_coef",
    }
