"""Motion scoring and high-quality finetuning-set selection.

Motion between two frames is measured by exhaustive block matching:
the next frame is cut into block x block tiles, each tile searches a
[-radius, radius]^2 displacement window for the minimum sum of absolute
differences against the previous frame, and the score is the mean of
(dy^2 + dx^2) / block^2 over tiles. Ties go to the smaller squared
displacement, then to row-major (dy, dx) order, so identical frames
score exactly zero. Frames are edge-padded to a multiple of the block
size, and the search field is the previous frame edge-padded by the
radius, so every displacement in the window is evaluated for every
tile. Matching runs on integer SAD over all three channels, making
scores exactly reproducible.

A clip enters the finetuning set only if its sidecar CLIP and aesthetic
scores clear their thresholds strictly and every window of six
consecutive transition motion scores sums above the motion threshold.

Manifests are JSONL, one entry per line; videos are decoded through a
pluggable adapter (the default reads ``.npz`` files holding a
``frames`` array of shape (T, H, W, 3) uint8 and a scalar ``fps``).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

DEFAULT_BLOCK = 16
DEFAULT_RADIUS = 7
DEFAULT_CLIP_MIN = 0.25
DEFAULT_AESTHETIC_MIN = 5.7
DEFAULT_MOTION_MIN = 0.5
DEFAULT_WINDOW = 6


class IncompleteEntryError(ValueError):
    """A manifest entry is missing scores the filter needs."""


class ManifestFormatError(ValueError):
    """A manifest line could not be parsed."""


@dataclass(frozen=True)
class FrameSequence:
    """Decoded video: a list of H x W x 3 uint8 frames plus fps."""

    frames: list[np.ndarray]
    fps: float

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not self.frames:
            raise ValueError("need at least one frame")
        shape = self.frames[0].shape
        for f in self.frames:
            if f.shape != shape or f.ndim != 3 or f.shape[2] != 3 or f.dtype != np.uint8:
                raise ValueError("all frames must be H x W x 3 uint8 of one size")


@dataclass(frozen=True)
class ManifestEntry:
    video_path: str
    clip_score: float | None = None
    aesthetic_score: float | None = None
    motion_scores: list[float] | None = None
    keep: bool | None = None

    def to_json_dict(self) -> dict:
        doc: dict = {"video_path": self.video_path}
        for field in ("clip_score", "aesthetic_score", "motion_scores", "keep"):
            value = getattr(self, field)
            if value is not None:
                doc[field] = value
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ManifestEntry":
        if "video_path" not in doc:
            raise ManifestFormatError("manifest entry lacks video_path")
        motion = doc.get("motion_scores")
        return cls(
            video_path=str(doc["video_path"]),
            clip_score=None if doc.get("clip_score") is None else float(doc["clip_score"]),
            aesthetic_score=None if doc.get("aesthetic_score") is None else float(doc["aesthetic_score"]),
            motion_scores=None if motion is None else [float(v) for v in motion],
            keep=doc.get("keep"),
        )


def _pad_to_multiple(frame: np.ndarray, block: int) -> np.ndarray:
    h, w = frame.shape[:2]
    pad_h = (-h) % block
    pad_w = (-w) % block
    if pad_h == 0 and pad_w == 0:
        return frame
    return np.pad(frame, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")


def motion_score(prev: np.ndarray, next: np.ndarray, block: int = DEFAULT_BLOCK, radius: int = DEFAULT_RADIUS) -> float:
    """Mean squared block displacement between two frames, per block area."""
    if prev.shape != next.shape:
        raise ValueError(f"frame shapes differ: {prev.shape} vs {next.shape}")
    if prev.ndim != 3 or prev.shape[2] != 3:
        raise ValueError("frames must be H x W x 3")
    if block < 1 or radius < 1:
        raise ValueError("block and radius must be positive")
    prev_p = _pad_to_multiple(prev, block).astype(np.int32)
    next_p = _pad_to_multiple(next, block).astype(np.int32)
    h, w = prev_p.shape[:2]
    ty, tx = h // block, w // block
    field = np.pad(prev_p, ((radius, radius), (radius, radius), (0, 0)), mode="edge")

    best_cost = np.full((ty, tx), np.iinfo(np.int64).max, dtype=np.int64)
    best_mag = np.zeros((ty, tx), dtype=np.int64)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = field[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            sad = np.abs(next_p - shifted).sum(axis=2)
            tile_cost = sad.reshape(ty, block, tx, block).sum(axis=(1, 3)).astype(np.int64)
            mag = dy * dy + dx * dx
            better = (tile_cost < best_cost) | ((tile_cost == best_cost) & (mag < best_mag))
            best_cost = np.where(better, tile_cost, best_cost)
            best_mag = np.where(better, mag, best_mag)
    return float(best_mag.mean() / (block * block))


def sequence_motion_scores(seq: FrameSequence, block: int = DEFAULT_BLOCK, radius: int = DEFAULT_RADIUS) -> list[float]:
    """Per-transition motion scores for consecutive frame pairs."""
    if len(seq.frames) < 2:
        raise ValueError("motion scoring needs at least 2 frames")
    return [
        motion_score(seq.frames[i], seq.frames[i + 1], block, radius)
        for i in range(len(seq.frames) - 1)
    ]


def hq_filter(
    entry: ManifestEntry,
    window: int = DEFAULT_WINDOW,
    clip_min: float = DEFAULT_CLIP_MIN,
    aesthetic_min: float = DEFAULT_AESTHETIC_MIN,
    motion_min: float = DEFAULT_MOTION_MIN,
) -> bool:
    """True iff all three strict thresholds pass.

    The motion rule requires every window of ``window`` consecutive
    transition scores to sum above ``motion_min`` (the minimum window
    sum must clear the threshold).
    """
    missing = [
        name
        for name, value in (
            ("clip_score", entry.clip_score),
            ("aesthetic_score", entry.aesthetic_score),
            ("motion_scores", entry.motion_scores),
        )
        if value is None
    ]
    if missing:
        raise IncompleteEntryError(f"{entry.video_path}: missing {', '.join(missing)}")
    if len(entry.motion_scores) < window:
        raise IncompleteEntryError(
            f"{entry.video_path}: {len(entry.motion_scores)} transitions, need >= {window}"
        )
    if not entry.clip_score > clip_min:
        return False
    if not entry.aesthetic_score > aesthetic_min:
        return False
    scores = entry.motion_scores
    min_window = min(
        sum(scores[j : j + window]) for j in range(len(scores) - window + 1)
    )
    return min_window > motion_min


def load_npz_video(path: str | os.PathLike) -> FrameSequence:
    """Default decoder adapter: frames + fps from an .npz archive."""
    with np.load(path) as archive:
        frames = archive["frames"]
        fps = float(archive["fps"])
    if frames.ndim != 4 or frames.shape[3] != 3 or frames.dtype != np.uint8:
        raise ValueError(f"{path}: expected (T, H, W, 3) uint8 frames, got {frames.shape} {frames.dtype}")
    return FrameSequence(frames=list(frames), fps=fps)


def save_npz_video(path: str | os.PathLike, frames: np.ndarray, fps: float) -> None:
    np.savez(path, frames=frames, fps=np.float64(fps))


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            entries.append(ManifestEntry.from_json_dict(doc))
    return entries


def write_manifest(path: str | os.PathLike, entries: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.to_json_dict(), sort_keys=True))
            fh.write("\n")


@dataclass(frozen=True)
class CurationSummary:
    total: int
    kept: int
    rejected: int
    incomplete: int


def run_curation(
    manifest_in: str | os.PathLike,
    manifest_out: str | os.PathLike,
    block: int = DEFAULT_BLOCK,
    radius: int = DEFAULT_RADIUS,
    clip_min: float = DEFAULT_CLIP_MIN,
    aesthetic_min: float = DEFAULT_AESTHETIC_MIN,
    motion_min: float = DEFAULT_MOTION_MIN,
    window: int = DEFAULT_WINDOW,
    decoder: Callable[[str], FrameSequence] = load_npz_video,
) -> CurationSummary:
    """Fill motion scores, apply the filter, write the annotated manifest.

    Per-entry decode or completeness failures mark the entry incomplete
    (keep stays unset) rather than aborting the run. Output order equals
    input order.
    """
    entries = read_manifest(manifest_in)
    annotated: list[ManifestEntry] = []
    kept = rejected = incomplete = 0
    for entry in entries:
        try:
            seq = decoder(entry.video_path)
            scores = sequence_motion_scores(seq, block, radius)
            entry = replace(entry, motion_scores=scores)
            keep = hq_filter(entry, window, clip_min, aesthetic_min, motion_min)
        except (OSError, ValueError, KeyError):
            incomplete += 1
            annotated.append(replace(entry, keep=None))
            continue
        if keep:
            kept += 1
        else:
            rejected += 1
        annotated.append(replace(entry, keep=keep))
    write_manifest(manifest_out, annotated)
    return CurationSummary(total=len(entries), kept=kept, rejected=rejected, incomplete=incomplete)
