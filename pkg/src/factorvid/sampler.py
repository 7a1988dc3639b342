"""Deterministic DDIM sampling wired through guidance and conditioning.

One trajectory starts from seeded unit Gaussian noise and walks a
decreasing timestep sequence. At each step the denoiser is queried once
per guidance branch the strategy actually weights, the branch outputs
are combined, the combined prediction is converted to an (x0, eps)
pair, and the iterate moves to the next timestep's marginal:

    x <- s[t'] * x0_hat + n[t'] * eps_hat.

The final step returns x0_hat. Everything is a pure function of
(seed, config, schedule, denoiser), so repeated runs are bit-identical.

Timestep selection from an N-step schedule:

* TRAILING keeps the terminal step: round(arange(N, 0, -N/steps)),
  e.g. 1000, 996, ..., 4 for 250 of 1000. Zero-terminal sampling
  needs this; skipping t = N would reintroduce the signal leak the
  rescaled schedule exists to remove.
* LINSPACE spans both ends: round(linspace(N, 1, steps)).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .conditioning import (
    ConditioningPack,
    make_empty_conditioning,
    make_image_conditioning,
    make_past_frames_conditioning,
)
from .latent import LatentVideo, NonFiniteLatentError
from .denoiser import CondHandle, DenoiserRequest
from .guidance import GuidanceSpec, branch_coefficients, compose_guided
from .schedule import NoiseSchedule, PredictionKind, ScheduleError, convert_prediction

_BRANCH_HANDLES = {
    "uncond": CondHandle.ABSENT,
    "image": CondHandle.IMAGE_ONLY,
    "text": CondHandle.TEXT_ONLY,
    "full": CondHandle.FULL,
}


class SamplingDivergenceError(ArithmeticError):
    """A sampling iterate went non-finite; carries the offending step."""


class TimestepSelection(enum.Enum):
    TRAILING = "trailing"
    LINSPACE = "linspace"


@dataclass(frozen=True)
class SamplerConfig:
    num_inference_steps: int = 250
    prediction_kind: PredictionKind = PredictionKind.V
    timestep_selection: TimestepSelection = TimestepSelection.TRAILING
    seed: int = 0

    def __post_init__(self):
        if self.num_inference_steps < 1:
            raise ValueError("num_inference_steps must be >= 1")


def select_timesteps(num_steps: int, num_inference_steps: int, selection: TimestepSelection) -> list[int]:
    """Descending 1-based timesteps drawn from [1, num_steps]."""
    if not 1 <= num_inference_steps <= num_steps:
        raise ScheduleError(
            f"num_inference_steps {num_inference_steps} outside [1, {num_steps}]"
        )
    if selection is TimestepSelection.TRAILING:
        raw = np.arange(num_steps, 0, -num_steps / num_inference_steps)
    else:
        raw = np.linspace(num_steps, 1, num_inference_steps)
    ts = [int(v) for v in np.round(raw)]
    if len(set(ts)) != len(ts):
        raise ScheduleError(f"timestep selection collapsed duplicates: {num_inference_steps} of {num_steps}")
    return ts


def _check_config(cfg: SamplerConfig, sched: NoiseSchedule) -> None:
    if cfg.num_inference_steps > sched.num_steps:
        raise ScheduleError("more inference steps than schedule steps")
    if (
        cfg.prediction_kind is PredictionKind.V
        and cfg.timestep_selection is TimestepSelection.TRAILING
        and not sched.zero_terminal
    ):
        raise ScheduleError(
            "v-prediction with trailing timesteps requires a zero-terminal schedule"
        )


def _ddim_loop(
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    denoiser,
    pack: ConditioningPack,
    guidance: GuidanceSpec,
    x: np.ndarray,
) -> np.ndarray:
    timesteps = select_timesteps(sched.num_steps, cfg.num_inference_steps, cfg.timestep_selection)
    needed = [name for name, coef in branch_coefficients(guidance).items() if coef != 0.0]
    for i, t in enumerate(timesteps):
        try:
            x_t = LatentVideo(x)
            branches: dict[str, LatentVideo | None] = {"uncond": None, "image": None, "text": None, "full": None}
            for name in needed:
                req = DenoiserRequest(x_t, pack, t, _BRANCH_HANDLES[name])
                branches[name] = denoiser(req, cfg.prediction_kind)
            composed = compose_guided(
                guidance, branches["uncond"], branches["image"], branches["text"], branches["full"]
            )
            x0_hat, eps_hat = convert_prediction(sched, t, x_t, composed, cfg.prediction_kind)
        except NonFiniteLatentError as exc:
            raise SamplingDivergenceError(f"non-finite values at step {i} (t={t}): {exc}") from exc
        if i + 1 == len(timesteps):
            return x0_hat.data
        t_next = timesteps[i + 1]
        x = sched.signal(t_next) * x0_hat.data + sched.noise(t_next) * eps_hat.data
        if not np.isfinite(x).all():
            raise SamplingDivergenceError(f"non-finite iterate after step {i} (t={t} -> {t_next})")
    raise AssertionError("unreachable: timestep list is non-empty")


def ddim_sample(
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    denoiser,
    pack: ConditioningPack,
    guidance: GuidanceSpec,
    shape: tuple[int, int, int, int],
) -> LatentVideo:
    """Run one deterministic sampling trajectory and return x0_hat."""
    _check_config(cfg, sched)
    if pack.shape != tuple(shape):
        raise ValueError(f"pack shape {pack.shape} does not match requested shape {tuple(shape)}")
    x = np.random.default_rng(cfg.seed).standard_normal(shape)
    return LatentVideo(_ddim_loop(cfg, sched, denoiser, pack, guidance, x))


def ddim_sample_batch(
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    denoiser,
    pack: ConditioningPack,
    guidance: GuidanceSpec,
    shape: tuple[int, int, int, int],
    seeds: list[int],
) -> np.ndarray:
    """Run many independently seeded trajectories in one vectorized pass.

    Each trajectory's initial noise is drawn exactly as ddim_sample
    draws it; the trajectories are packed side by side along the height
    axis, so results are bit-identical to per-seed ddim_sample calls for
    any denoiser whose computation is independent across spatial
    positions (true of the Gaussian oracle and the toy net).

    Returns an array of shape (len(seeds),) + shape.
    """
    _check_config(cfg, sched)
    if pack.shape != tuple(shape):
        raise ValueError(f"pack shape {pack.shape} does not match requested shape {tuple(shape)}")
    if not seeds:
        raise ValueError("need at least one seed")
    t, c, h, w = shape
    b = len(seeds)
    noise = np.stack([np.random.default_rng(seed).standard_normal(shape) for seed in seeds])
    folded = noise.transpose(1, 2, 0, 3, 4).reshape(t, c, b * h, w)
    tiled_pack = ConditioningPack(
        LatentVideo(np.tile(pack.cond_latent.data, (1, 1, b, 1))),
        np.tile(pack.frame_mask, (1, 1, b, 1)),
        pack.kind,
        pack.past_frames,
    )
    out = _ddim_loop(cfg, sched, denoiser, tiled_pack, guidance, folded)
    return out.reshape(t, c, b, h, w).transpose(2, 0, 1, 3, 4)


def generate_factorized(
    cfg_image: SamplerConfig,
    cfg_video: SamplerConfig,
    sched: NoiseSchedule,
    denoiser,
    guidance_image: GuidanceSpec,
    guidance_video: GuidanceSpec,
    shape: tuple[int, int, int, int],
) -> tuple[LatentVideo, LatentVideo]:
    """Two-step generation: a single frame first, then the video on top.

    Step one samples a single-frame latent with text-only guidance and
    an all-zero conditioning pack. Step two packs that frame as
    first-frame conditioning and samples the full clip. The video's
    frame 0 is conditioned on, not clamped to, the image.
    """
    t, c, h, w = shape
    if t < 2:
        raise ValueError("factorized generation needs at least 2 frames")
    image_pack = make_empty_conditioning(1, c, h, w)
    image = ddim_sample(cfg_image, sched, denoiser, image_pack, guidance_image, (1, c, h, w))
    video_pack = make_image_conditioning(image, t)
    video = ddim_sample(cfg_video, sched, denoiser, video_pack, guidance_video, shape)
    return image, video


def extend_video(
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    denoiser,
    guidance: GuidanceSpec,
    past: LatentVideo,
    target_frames: int,
) -> LatentVideo:
    """Sample a longer clip conditioned on all frames of a past clip."""
    pack = make_past_frames_conditioning(past, target_frames)
    shape = (target_frames,) + past.shape[1:]
    return ddim_sample(cfg, sched, denoiser, pack, guidance, shape)
