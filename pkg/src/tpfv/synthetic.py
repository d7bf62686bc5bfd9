"""Synthetic benchmark fixtures: videos with known class structure.

Each video gets smoothly moving landmarks and per-frame feature maps whose
activations around the landmarks are drawn from class-specific mixtures.
Every landmark carries a fixed per-channel profile (shared by all videos)
so pooled descriptors span a genuinely multi-dimensional space, and the
class decides which landmark groups fire with which amplitude mixture, so
the encoded gradients carry a consistent per-class signature.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import storage
from .datamodel import (
    NUM_LANDMARKS,
    DatasetManifest,
    FeatureMapSequence,
    Label,
    LandmarkTrack,
    ManifestEntry,
)

# standard 68-point region index groups
_BROWS = tuple(range(17, 27))
_EYES = tuple(range(36, 48))
_MOUTH = tuple(range(48, 68))


def _face_layout(source: int) -> np.ndarray:
    """A face-ish arrangement: jaw arc, brows, nose, eyes, mouth ring."""
    pts = np.empty((NUM_LANDMARKS, 2))
    cx = cy = source / 2.0
    r = source * 0.36
    for j in range(17):                       # jaw 0..16
        a = np.pi * (0.1 + 0.8 * j / 16.0)
        pts[j] = (cx - r * np.cos(a), cy + r * np.sin(a) * 0.9)
    for i, j in enumerate(_BROWS):            # brows 17..26
        pts[j] = (cx - r * 0.7 + i * r * 0.155, cy - r * 0.55)
    for i, j in enumerate(range(27, 36)):     # nose 27..35
        pts[j] = (cx - r * 0.2 + (i % 3) * r * 0.2, cy - r * 0.2 + (i // 3) * r * 0.18)
    for i, j in enumerate(_EYES):             # eyes 36..47
        side = -1 if i < 6 else 1
        a = 2 * np.pi * (i % 6) / 6.0
        pts[j] = (cx + side * r * 0.42 + r * 0.1 * np.cos(a), cy - r * 0.28 + r * 0.07 * np.sin(a))
    for i, j in enumerate(_MOUTH):            # mouth 48..67
        a = 2 * np.pi * i / 20.0
        pts[j] = (cx + r * 0.28 * np.cos(a), cy + r * 0.42 + r * 0.14 * np.sin(a))
    return pts


def _moving_track(video_id, frames, source, rng) -> LandmarkTrack:
    base = _face_layout(source)
    pts = np.empty((frames, NUM_LANDMARKS, 2))
    phase = rng.uniform(0, 2 * np.pi, size=NUM_LANDMARKS)
    for t in range(frames):
        wobble = np.column_stack(
            [np.cos(0.4 * t + phase), np.sin(0.4 * t + phase)]
        ) * (source * 0.01)
        pts[t] = base + wobble + rng.normal(0, source * 0.002, size=(NUM_LANDMARKS, 2))
    return LandmarkTrack(video_id=video_id, points=pts)


def _render_video(track, paint_jobs, source, map_size, channels, rng, noise=0.3):
    """Paint per-frame maps.

    ``paint_jobs`` rows are (landmark_indices, channel_indices, mixture_means,
    profiles): per frame, each listed landmark draws an amplitude from the
    mixture and adds amplitude * its channel profile in a 3x3 blob around its
    map position.
    """
    frames = track.frame_count
    maps = rng.normal(0.0, noise, size=(frames, channels, map_size, map_size)).astype(np.float32)
    ratio = map_size / source
    for t in range(frames):
        for landmarks, block, mixture_means, profiles in paint_jobs:
            means = np.asarray(mixture_means)
            comp = rng.integers(len(means), size=len(landmarks))
            amps = means[comp] + rng.normal(0, 0.2, size=len(landmarks))
            block_idx = np.asarray(block)
            for i, j in enumerate(landmarks):
                x, y = track.points[t, j]
                yi = int(np.clip(round(y * ratio), 0, map_size - 1))
                xi = int(np.clip(round(x * ratio), 0, map_size - 1))
                y0, y1 = max(0, yi - 1), min(map_size, yi + 2)
                x0, x1 = max(0, xi - 1), min(map_size, xi + 2)
                maps[t, block_idx, y0:y1, x0:x1] += (amps[i] * profiles[i])[:, None, None]
    return maps


def _landmark_chunks(n_groups):
    """Contiguous landmark-index chunks; index order keeps facial regions
    mostly intact."""
    bounds = np.linspace(0, NUM_LANDMARKS, n_groups + 1).astype(int)
    return [tuple(range(bounds[g], bounds[g + 1])) for g in range(n_groups)]


def generate_benchmark(out_dir, actors=3, classes=2, videos_per_class=2, frames=24,
                       channels=32, map_size=16, source=128, seed=7):
    """Categorical fixture: class c fires landmark group (g + c) mod
    ``classes`` with the hot amplitude mixture and the rest with the cold
    one.  Returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    block = tuple(range(channels // 2))
    # per-landmark channel profiles, shared by every video
    profiles = rng.uniform(0.5, 1.5, size=(NUM_LANDMARKS, len(block)))
    groups = _landmark_chunks(classes)
    hot, cold = (3.0, 4.5), (0.6, 1.4)
    entries = []
    for a in range(actors):
        for cls in range(classes):
            for v in range(videos_per_class):
                vid = f"actor{a:02d}_c{cls}_v{v}"
                track = _moving_track(vid, frames, source, rng)
                jobs = []
                for g, landmarks in enumerate(groups):
                    mixture = hot if g == cls else cold
                    jobs.append((landmarks, block, mixture,
                                 profiles[np.asarray(landmarks)]))
                maps = _render_video(track, jobs, source, map_size, channels, rng)
                seq = FeatureMapSequence(video_id=vid, frames=maps, source_height=source,
                                         source_width=source)
                storage.write_feature_maps(out / f"{vid}.tpfv", seq)
                storage.write_landmarks(out / f"{vid}.json", track)
                entries.append(
                    ManifestEntry(
                        video_id=vid,
                        actor_id=f"actor{a:02d}",
                        label=Label(class_id=cls),
                        feature_path=f"{vid}.tpfv",
                        landmark_path=f"{vid}.json",
                    )
                )
    manifest = DatasetManifest(entries=tuple(entries), num_classes=classes, task="categorical")
    path = out / "manifest.jsonl"
    storage.write_manifest(path, manifest)
    return path


_AU_REGION_SETS = {4: _BROWS, 6: _EYES, 12: _MOUTH}
_PATTERNS = [(1, 0, 0), (0, 1, 1), (1, 1, 0), (0, 0, 1)]


def generate_multilabel_benchmark(out_dir, actors=2, frames=28, channels=16, map_size=16,
                                  source=128, seed=11):
    """Multilabel fixture over three synthetic action units (4, 6, 12): an
    active unit paints its facial region's landmarks in its own channel
    block."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    au_ids = tuple(sorted(_AU_REGION_SETS))
    blocks = {au: tuple(range(i * 4, (i + 1) * 4)) for i, au in enumerate(au_ids)}
    profiles = {
        au: rng.uniform(0.5, 1.5, size=(len(_AU_REGION_SETS[au]), 4)) for au in au_ids
    }
    entries = []
    for a in range(actors):
        for v, bits in enumerate(_PATTERNS):
            vid = f"actor{a:02d}_v{v}"
            track = _moving_track(vid, frames, source, rng)
            jobs = []
            for bit, au in enumerate(au_ids):
                if bits[bit]:
                    jobs.append((_AU_REGION_SETS[au], blocks[au], (3.0, 5.0), profiles[au]))
            maps = _render_video(track, jobs, source, map_size, channels, rng)
            seq = FeatureMapSequence(video_id=vid, frames=maps, source_height=source,
                                     source_width=source)
            storage.write_feature_maps(out / f"{vid}.tpfv", seq)
            storage.write_landmarks(out / f"{vid}.json", track)
            entries.append(
                ManifestEntry(
                    video_id=vid,
                    actor_id=f"actor{a:02d}",
                    label=Label(au_bits=bits),
                    feature_path=f"{vid}.tpfv",
                    landmark_path=f"{vid}.json",
                )
            )
    manifest = DatasetManifest(entries=tuple(entries), num_classes=3, task="multilabel",
                               au_ids=au_ids)
    path = out / "manifest.jsonl"
    storage.write_manifest(path, manifest)
    return path
