"""Masked frame conditioning for image-to-video and interpolation.

A conditioning pack pairs a latent that is zero everywhere except on
conditioning frames with a binary per-frame mask of shape (T, 1, H, W).
The denoiser consumes the channel-wise concatenation

    [noised latent (C) | conditioning latent (C) | mask (1)]

so its input always carries 2C + 1 channels.

Interpolation conditioning zero-interleaves 8 input frames into a
37-frame tensor: 4 new frames lead, 3 new frames sit between every
adjacent pair, and 4 new frames trail, which places original frame j
at output index 4 + 4j. Two such 37-frame outputs covering consecutive
halves are stitched by dropping the overlap (last 5 frames of the
first, first 4 of the second) and concatenating to 65 frames.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .latent import LatentVideo
from .schedule import NoiseSchedule, ScheduleError

INTERP_INPUT_FRAMES = 8
INTERP_OUTPUT_FRAMES = 37
INTERP_STRIDE = 4
INTERP_LEAD = 4
STITCH_DROP_FIRST_TAIL = 5
STITCH_DROP_SECOND_HEAD = 4


class PackKind(enum.Enum):
    FIRST_FRAME = "first_frame"
    PAST_FRAMES = "past_frames"
    INTERLEAVED = "interleaved"
    NONE = "none"  # unconditioned runs (text-to-image stage)


def interleave_indices() -> list[int]:
    """Output indices that carry the 8 original frames: 4 + 4j."""
    return [INTERP_LEAD + INTERP_STRIDE * j for j in range(INTERP_INPUT_FRAMES)]


@dataclass(frozen=True)
class ConditioningPack:
    """Conditioning latent plus binary frame mask; immutable."""

    cond_latent: LatentVideo
    frame_mask: np.ndarray  # (T, 1, H, W) of {0.0, 1.0}
    kind: PackKind
    past_frames: int | None = None  # set for PAST_FRAMES packs

    def __post_init__(self):
        mask = np.ascontiguousarray(self.frame_mask, dtype=np.float64)
        t, c, h, w = self.cond_latent.shape
        if mask.shape != (t, 1, h, w):
            raise ValueError(f"mask shape {mask.shape} does not match latent {(t, 1, h, w)}")
        if not np.isin(mask, (0.0, 1.0)).all():
            raise ValueError("frame mask must be binary")
        per_frame = mask.reshape(t, -1)
        frame_flags = per_frame[:, 0]
        if not (per_frame == frame_flags[:, None]).all():
            raise ValueError("frame mask must be constant within each frame")
        off = frame_flags == 0.0
        if np.any(self.cond_latent.data[off] != 0.0):
            raise ValueError("conditioning latent must be exactly zero on masked-out frames")
        expected = self._expected_flags(t)
        if not np.array_equal(frame_flags, expected):
            raise ValueError(f"mask pattern does not match pack kind {self.kind.value}")
        mask.setflags(write=False)
        object.__setattr__(self, "frame_mask", mask)

    def _expected_flags(self, t: int) -> np.ndarray:
        flags = np.zeros(t, dtype=np.float64)
        if self.kind is PackKind.FIRST_FRAME:
            flags[0] = 1.0
        elif self.kind is PackKind.PAST_FRAMES:
            k = self.past_frames
            if k is None or not 1 <= k < t:
                raise ValueError(f"past_frames must be in [1, T), got {k}")
            flags[:k] = 1.0
        elif self.kind is PackKind.INTERLEAVED:
            if t != INTERP_OUTPUT_FRAMES:
                raise ValueError(f"interleaved packs have {INTERP_OUTPUT_FRAMES} frames, got {t}")
            flags[interleave_indices()] = 1.0
        return flags

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.cond_latent.shape

    def conditioned_frames(self) -> list[int]:
        """Frame indices with mask = 1, ascending."""
        flags = self.frame_mask.reshape(self.frame_mask.shape[0], -1)[:, 0]
        return [int(i) for i in np.nonzero(flags)[0]]


def make_image_conditioning(image_latent: LatentVideo, target_frames: int) -> ConditioningPack:
    """Zero-pad a single-frame latent to T frames, mask 1 on frame 0."""
    if image_latent.frames != 1:
        raise ValueError(f"image conditioning needs a single-frame latent, got T={image_latent.frames}")
    if target_frames < 1:
        raise ValueError("target_frames must be >= 1")
    _, c, h, w = image_latent.shape
    cond = np.zeros((target_frames, c, h, w), dtype=np.float64)
    cond[0] = image_latent.data[0]
    mask = np.zeros((target_frames, 1, h, w), dtype=np.float64)
    mask[0] = 1.0
    return ConditioningPack(LatentVideo(cond), mask, PackKind.FIRST_FRAME)


def make_past_frames_conditioning(past: LatentVideo, target_frames: int) -> ConditioningPack:
    """Copy k past frames into the first k slots, mask 1 there."""
    k = past.frames
    if k >= target_frames:
        raise ValueError(f"past clip ({k} frames) must be shorter than the target ({target_frames})")
    _, c, h, w = past.shape
    cond = np.zeros((target_frames, c, h, w), dtype=np.float64)
    cond[:k] = past.data
    mask = np.zeros((target_frames, 1, h, w), dtype=np.float64)
    mask[:k] = 1.0
    return ConditioningPack(LatentVideo(cond), mask, PackKind.PAST_FRAMES, past_frames=k)


def make_empty_conditioning(frames: int, channels: int, height: int, width: int) -> ConditioningPack:
    """All-zero pack for unconditioned sampling; keeps the 2C+1 input contract."""
    cond = LatentVideo.zeros(frames, channels, height, width)
    mask = np.zeros((frames, 1, height, width), dtype=np.float64)
    return ConditioningPack(cond, mask, PackKind.NONE)


def interleave_for_interpolation(low_fps: LatentVideo) -> ConditioningPack:
    """Zero-interleave 8 frames into a 37-frame conditioning pack."""
    if low_fps.frames != INTERP_INPUT_FRAMES:
        raise ValueError(f"interleaving expects exactly {INTERP_INPUT_FRAMES} frames, got {low_fps.frames}")
    _, c, h, w = low_fps.shape
    cond = np.zeros((INTERP_OUTPUT_FRAMES, c, h, w), dtype=np.float64)
    mask = np.zeros((INTERP_OUTPUT_FRAMES, 1, h, w), dtype=np.float64)
    for j, idx in enumerate(interleave_indices()):
        cond[idx] = low_fps.data[j]
        mask[idx] = 1.0
    return ConditioningPack(LatentVideo(cond), mask, PackKind.INTERLEAVED)


def stitch_interpolated_halves(first: LatentVideo, second: LatentVideo) -> LatentVideo:
    """Drop the overlap and concatenate two 37-frame halves to 65 frames.

    Keeps frames 0..31 of the first half and 4..36 of the second; output
    index 32 is the second half's frame 4.
    """
    if first.frames != INTERP_OUTPUT_FRAMES or second.frames != INTERP_OUTPUT_FRAMES:
        raise ValueError(
            f"stitching expects two {INTERP_OUTPUT_FRAMES}-frame videos, "
            f"got {first.frames} and {second.frames}"
        )
    if first.shape[1:] != second.shape[1:]:
        raise ValueError(f"halves disagree on (C, H, W): {first.shape[1:]} vs {second.shape[1:]}")
    kept_first = first.data[: INTERP_OUTPUT_FRAMES - STITCH_DROP_FIRST_TAIL]
    kept_second = second.data[STITCH_DROP_SECOND_HEAD:]
    return LatentVideo(np.concatenate([kept_first, kept_second], axis=0))


def noise_augment(
    pack: ConditioningPack, sched: NoiseSchedule, t: int, rng_seed: int
) -> ConditioningPack:
    """Corrupt conditioning frames to s[t]*frame + n[t]*eps; t = 0 is identity.

    Noise is drawn from a generator seeded with ``rng_seed``, one
    (C, H, W) block per conditioned frame in ascending frame order.
    Masked-out frames stay exactly zero.
    """
    if t == 0:
        return pack
    if not 1 <= t <= sched.num_steps:
        raise ScheduleError(f"augmentation timestep {t} outside [0, {sched.num_steps}]")
    s = sched.signal(t)
    n = sched.noise(t)
    rng = np.random.default_rng(rng_seed)
    data = pack.cond_latent.data.copy()
    for idx in pack.conditioned_frames():
        eps = rng.standard_normal(data.shape[1:])
        data[idx] = s * data[idx] + n * eps
    return ConditioningPack(LatentVideo(data), pack.frame_mask, pack.kind, pack.past_frames)


def denoiser_input(x_t: LatentVideo, pack: ConditioningPack) -> LatentVideo:
    """Concatenate noised latent, conditioning latent and mask channel-wise."""
    t, c, h, w = x_t.shape
    if pack.shape != (t, c, h, w):
        raise ValueError(f"pack shape {pack.shape} does not match latent {x_t.shape}")
    stacked = np.concatenate([x_t.data, pack.cond_latent.data, pack.frame_mask], axis=1)
    return LatentVideo(stacked)
