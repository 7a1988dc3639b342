from __future__ import annotations

import json

import numpy as np
import pytest

from factorvid import IncompleteEntryError, ManifestEntry, hq_filter, motion_score, run_curation
from factorvid.curation import (
    FrameSequence,
    read_manifest,
    save_npz_video,
    sequence_motion_scores,
    write_manifest,
)

from oracles import brute_force_motion_score, min_window_sum


def shifted_pair(rng, d: int, h: int = 48, w: int = 32):
    """Frames related by a vertical shift of d with edge replication."""
    prev = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    nxt = np.empty_like(prev)
    for y in range(h):
        nxt[y] = prev[min(y + d, h - 1)]
    return prev, nxt


def rolled_sequence(rng, frames: int, d: int, h: int = 128, w: int = 64):
    """Circularly panning clip; transitions share one displacement d."""
    tex = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    return [np.roll(tex, -d * i, axis=0) for i in range(frames)]


def test_identical_frames_score_zero():
    rng = np.random.default_rng(0)
    frame = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    assert motion_score(frame, frame, 16, 7) == 0.0


def test_uniform_frames_tie_break_to_zero():
    a = np.full((32, 32, 3), 9, dtype=np.uint8)
    b = np.full((32, 32, 3), 9, dtype=np.uint8)
    assert motion_score(a, b, 16, 7) == 0.0


@pytest.mark.parametrize("d", [0, 1, 3, 7])
def test_global_shift_reproduces_energy(d):
    rng = np.random.default_rng(1 + d)
    prev, nxt = shifted_pair(rng, d)
    score = motion_score(prev, nxt, block=16, radius=7)
    assert score == pytest.approx(d * d / 256, abs=0)
    assert score == pytest.approx(brute_force_motion_score(prev, nxt, 16, 7), abs=0)


def test_motion_score_matches_brute_force_on_random_frames():
    rng = np.random.default_rng(9)
    for _ in range(3):
        prev = rng.integers(0, 256, size=(24, 40, 3), dtype=np.uint8)
        nxt = rng.integers(0, 256, size=(24, 40, 3), dtype=np.uint8)
        assert motion_score(prev, nxt, 8, 3) == pytest.approx(
            brute_force_motion_score(prev, nxt, 8, 3), abs=0
        )


def test_motion_score_handles_non_divisible_sizes():
    rng = np.random.default_rng(10)
    prev = rng.integers(0, 256, size=(20, 23, 3), dtype=np.uint8)
    nxt = rng.integers(0, 256, size=(20, 23, 3), dtype=np.uint8)
    score = motion_score(prev, nxt, 8, 2)
    assert score == pytest.approx(brute_force_motion_score(prev, nxt, 8, 2), abs=0)


def test_motion_monotone_in_displacement():
    rng = np.random.default_rng(11)
    scores = []
    for d in (0, 1, 3, 7):
        prev, nxt = shifted_pair(np.random.default_rng(50), d)
        scores.append(motion_score(prev, nxt, 16, 7))
    assert scores == sorted(scores)


def test_motion_score_rejects_mismatched_sizes():
    rng = np.random.default_rng(12)
    a = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    b = rng.integers(0, 256, size=(16, 32, 3), dtype=np.uint8)
    with pytest.raises(ValueError):
        motion_score(a, b, 16, 7)


def entry(clip=0.30, aesthetic=6.0, motion=None) -> ManifestEntry:
    if motion is None:
        motion = [0.1] * 7
    return ManifestEntry("clip.npz", clip_score=clip, aesthetic_score=aesthetic, motion_scores=motion)


def test_hq_filter_passing_entry():
    assert hq_filter(entry(motion=[0.1] * 7)) is True  # every 6-window sums to 0.6


def test_hq_filter_strict_boundaries():
    assert hq_filter(entry(clip=0.25)) is False
    assert hq_filter(entry(aesthetic=5.7)) is False
    assert hq_filter(entry(motion=[0.5 / 6] * 7)) is False  # window sums hit exactly 0.5


def test_hq_filter_single_weak_window():
    # one window sums to 0.4, the rest are strong
    motion = [0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4, 0.4, 0.4, 0.4, 0.4]
    assert min_window_sum(motion, 6) == pytest.approx(0.4)
    assert hq_filter(entry(motion=motion)) is False


def test_hq_filter_incomplete_entries_raise():
    with pytest.raises(IncompleteEntryError):
        hq_filter(ManifestEntry("x", clip_score=None, aesthetic_score=6.0, motion_scores=[0.1] * 7))
    with pytest.raises(IncompleteEntryError):
        hq_filter(ManifestEntry("x", clip_score=0.3, aesthetic_score=6.0, motion_scores=[0.1] * 3))


def test_hq_filter_agrees_with_window_enumeration():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        n = int(rng.integers(6, 20))
        motion = list(rng.uniform(0.0, 0.2, size=n))
        e = entry(motion=motion)
        expected = min_window_sum(motion, 6) > 0.5
        assert hq_filter(e) is expected


def test_filter_is_order_independent():
    rng = np.random.default_rng(14)
    entries = [entry(motion=list(rng.uniform(0, 0.2, 8))) for _ in range(20)]
    decisions = [hq_filter(e) for e in entries]
    shuffled = list(reversed(entries))
    assert [hq_filter(e) for e in shuffled] == list(reversed(decisions))


def test_run_curation_pipeline(tmp_path):
    rng = np.random.default_rng(15)
    videos = {
        "static.npz": rolled_sequence(rng, 8, 0),
        "slow.npz": rolled_sequence(rng, 8, 1),
        "fast.npz": rolled_sequence(rng, 8, 7),
    }
    for name, frames in videos.items():
        save_npz_video(tmp_path / name, np.stack(frames), fps=4.0)
    entries = [
        ManifestEntry(str(tmp_path / name), clip_score=0.30, aesthetic_score=6.0)
        for name in ("static.npz", "slow.npz", "fast.npz")
    ]
    entries.append(ManifestEntry(str(tmp_path / "missing.npz"), clip_score=0.30, aesthetic_score=6.0))
    entries.append(ManifestEntry(str(tmp_path / "fast.npz"), clip_score=0.30))  # no aesthetic sidecar
    manifest_in = tmp_path / "in.jsonl"
    manifest_out = tmp_path / "out.jsonl"
    write_manifest(manifest_in, entries)

    summary = run_curation(manifest_in, manifest_out, block=16, radius=7)
    assert summary.total == 5
    assert summary.kept == 1
    assert summary.rejected == 2
    assert summary.incomplete == 2

    annotated = read_manifest(manifest_out)
    assert [e.video_path for e in annotated] == [e.video_path for e in entries]
    assert annotated[0].keep is False   # static: no motion
    assert annotated[1].keep is False   # slow pan: window sums below threshold
    assert annotated[2].keep is True    # fast pan
    assert annotated[3].keep is None    # decode failure
    assert annotated[4].keep is None    # missing sidecar
    assert len(annotated[2].motion_scores) == 7
    # fast pan transitions carry the d^2 energy on the wrap-free tiles
    assert min(annotated[2].motion_scores) * 6 > 0.5


def test_run_curation_empty_manifest(tmp_path):
    manifest_in = tmp_path / "in.jsonl"
    manifest_in.write_text("")
    summary = run_curation(manifest_in, tmp_path / "out.jsonl")
    assert (summary.total, summary.kept, summary.rejected, summary.incomplete) == (0, 0, 0, 0)


def test_sequence_motion_scores_requires_two_frames():
    rng = np.random.default_rng(16)
    frame = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    with pytest.raises(ValueError):
        sequence_motion_scores(FrameSequence([frame], fps=4.0))


def test_manifest_round_trip(tmp_path):
    entries = [
        ManifestEntry("a.npz", clip_score=0.3, aesthetic_score=6.0, motion_scores=[0.1, 0.2], keep=True),
        ManifestEntry("b.npz"),
    ]
    path = tmp_path / "m.jsonl"
    write_manifest(path, entries)
    loaded = read_manifest(path)
    assert loaded == entries
    lines = path.read_text().strip().split("\n")
    assert json.loads(lines[1]) == {"video_path": "b.npz"}  # absent fields are omitted
