import numpy as np
import pytest

from tpfv.datamodel import DatasetManifest, FeatureMapSequence, Label, LandmarkTrack, ManifestEntry


def make_track(video_id="vid", frames=10, source=(128, 128), rng=None, motion=None):
    """Landmarks laid out on a grid inside the image, optionally moving."""
    h, w = source
    base = np.empty((68, 2))
    for j in range(68):
        base[j] = ((j % 10 + 1) * w / 12.0, (j // 10 + 1) * h / 9.0)
    pts = np.repeat(base[None], frames, axis=0)
    if motion is not None:
        for t in range(frames):
            pts[t] += motion(t)
    if rng is not None:
        pts += rng.normal(0, 0.5, size=pts.shape)
    return LandmarkTrack(video_id=video_id, points=pts)


def make_features(video_id="vid", frames=10, channels=4, map_size=(16, 16),
                  source=(128, 128), fill=None, rng=None):
    t = frames
    c = channels
    h, w = map_size
    if fill is not None:
        maps = np.full((t, c, h, w), 0.0, dtype=np.float32)
        maps += np.asarray(fill, dtype=np.float32).reshape(1, c, 1, 1)
    elif rng is not None:
        maps = rng.normal(0, 1, size=(t, c, h, w)).astype(np.float32)
    else:
        maps = np.zeros((t, c, h, w), dtype=np.float32)
    return FeatureMapSequence(
        video_id=video_id,
        frames=maps,
        source_height=source[0],
        source_width=source[1],
    )


def make_manifest(num_actors=3, videos_per_actor=2, num_classes=2, task="categorical",
                  au_ids=None):
    entries = []
    for a in range(num_actors):
        for v in range(videos_per_actor):
            vid = f"a{a:02d}_v{v}"
            if task == "categorical":
                label = Label(class_id=v % num_classes)
            else:
                bits = tuple((v + a + u) % 2 for u in range(num_classes))
                label = Label(au_bits=bits)
            entries.append(
                ManifestEntry(
                    video_id=vid,
                    actor_id=f"actor{a:02d}",
                    label=label,
                    feature_path=f"{vid}.tpfv",
                    landmark_path=f"{vid}.json",
                )
            )
    return DatasetManifest(entries=tuple(entries), num_classes=num_classes, task=task,
                           au_ids=au_ids)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
