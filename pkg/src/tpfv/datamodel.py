"""Core value types of the pipeline and their validity checks.

Everything here is an immutable value after construction: instances can be
shared freely across threads and processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NUM_LANDMARKS = 68

# Lower bound on mixture variances; keeps components non-degenerate and the
# Fisher gradient denominators bounded away from zero.
VARIANCE_FLOOR = 1e-6


class FormatError(Exception):
    """A file does not conform to its on-disk format.

    ``offset`` is the byte offset of the first offending content.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _as_float_array(values, dtype=np.float64):
    arr = np.asarray(values, dtype=dtype)
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class FeatureMapSequence:
    """Per-frame backbone feature tensors for one video.

    ``frames`` has shape (T, C, Hf, Wf); all frames share the same geometry.
    ``source_height``/``source_width`` are the pixel dimensions of the images
    the maps were computed from, needed to scale pooling regions.
    """

    video_id: str
    frames: np.ndarray
    source_height: int
    source_width: int
    layer_tag: str = "conv5"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 4:
            raise ValueError(
                f"feature maps must be (frames, channels, height, width), got shape {frames.shape}"
            )
        t, c, hf, wf = frames.shape
        if t < 1 or c < 1 or hf < 1 or wf < 1:
            raise ValueError(f"empty feature map dimensions: {frames.shape}")
        if self.source_height < hf or self.source_width < wf:
            raise ValueError(
                f"source image {self.source_height}x{self.source_width} smaller than "
                f"feature map {hf}x{wf}"
            )
        if not np.isfinite(frames).all():
            raise ValueError(f"non-finite values in feature maps of video {self.video_id!r}")
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self):
        return self.frames.shape[0]

    @property
    def channels(self):
        return self.frames.shape[1]

    @property
    def map_height(self):
        return self.frames.shape[2]

    @property
    def map_width(self):
        return self.frames.shape[3]


@dataclass(frozen=True)
class LandmarkTrack:
    """Per-frame 68-point facial geometry in source-image coordinates.

    Point order is stable across frames: point j of frame t corresponds to
    point j of frame t+1.  Coordinates may fall slightly outside the image
    (detector overshoot); consumers clip when indexing into arrays.
    """

    video_id: str
    points: np.ndarray

    def __post_init__(self):
        pts = _as_float_array(self.points)
        if pts.ndim != 3 or pts.shape[1] != NUM_LANDMARKS or pts.shape[2] != 2:
            raise ValueError(
                f"landmarks must be (frames, {NUM_LANDMARKS}, 2), got shape {pts.shape}"
            )
        if pts.shape[0] < 1:
            raise ValueError("landmark track must cover at least one frame")
        if not np.isfinite(pts).all():
            raise ValueError(f"non-finite landmark coordinates in video {self.video_id!r}")
        object.__setattr__(self, "points", pts)

    @property
    def frame_count(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class Label:
    """Either a categorical class id or a multi-label action-unit bitset."""

    class_id: Optional[int] = None
    au_bits: Optional[tuple] = None

    def __post_init__(self):
        if (self.class_id is None) == (self.au_bits is None):
            raise ValueError("label must set exactly one of class_id / au_bits")
        if self.class_id is not None and self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")
        if self.au_bits is not None:
            bits = tuple(int(b) for b in self.au_bits)
            if any(b not in (0, 1) for b in bits):
                raise ValueError(f"au_bits must be 0/1, got {self.au_bits}")
            object.__setattr__(self, "au_bits", bits)

    @property
    def is_multilabel(self):
        return self.au_bits is not None


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    actor_id: str
    label: Label
    feature_path: str
    landmark_path: str


@dataclass(frozen=True)
class DatasetManifest:
    """Dataset index: one entry per video plus task-level metadata.

    ``au_ids`` names the action unit behind each bit of multilabel labels
    (used by trajectory selection); optional for categorical tasks.
    """

    entries: tuple
    num_classes: int
    task: str = "categorical"
    au_ids: Optional[tuple] = None

    def __post_init__(self):
        if self.task not in ("categorical", "multilabel"):
            raise ValueError(f"unknown task {self.task!r}")
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.au_ids is not None:
            object.__setattr__(self, "au_ids", tuple(int(a) for a in self.au_ids))

    @property
    def actor_ids(self):
        seen = []
        for e in self.entries:
            if e.actor_id not in seen:
                seen.append(e.actor_id)
        return seen

    def entries_for_videos(self, video_ids):
        wanted = set(video_ids)
        return [e for e in self.entries if e.video_id in wanted]


def validate_manifest(manifest: DatasetManifest) -> list:
    """Check manifest invariants; returns one violation string per defect.

    Violations are data, not errors: an empty list means the manifest is valid.
    """
    violations = []
    seen = set()
    for i, e in enumerate(manifest.entries):
        where = f"entry {i} ({e.video_id!r})"
        if e.video_id in seen:
            violations.append(f"duplicate video_id {e.video_id!r}")
        seen.add(e.video_id)
        if not e.actor_id:
            violations.append(f"{where}: empty actor_id")
        if not e.feature_path:
            violations.append(f"{where}: missing feature_path")
        if not e.landmark_path:
            violations.append(f"{where}: missing landmark_path")
        if manifest.task == "categorical":
            if e.label.class_id is None:
                violations.append(f"{where}: categorical task but no class id")
            elif e.label.class_id >= manifest.num_classes:
                violations.append(
                    f"{where}: class id {e.label.class_id} out of range "
                    f"(num_classes={manifest.num_classes})"
                )
        else:
            if e.label.au_bits is None:
                violations.append(f"{where}: multilabel task but no au_bits")
            elif len(e.label.au_bits) != manifest.num_classes:
                violations.append(
                    f"{where}: au_bits width {len(e.label.au_bits)} != {manifest.num_classes}"
                )
    if manifest.au_ids is not None and len(manifest.au_ids) != manifest.num_classes:
        violations.append(
            f"au_ids length {len(manifest.au_ids)} != num_classes {manifest.num_classes}"
        )
    return violations


@dataclass(frozen=True)
class GmmModel:
    """Diagonal-covariance Gaussian mixture: K weighted Gaussians over R^d."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = _as_float_array(self.weights)
        mu = _as_float_array(self.means)
        var = _as_float_array(self.variances)
        if w.ndim != 1 or mu.ndim != 2 or var.shape != mu.shape or w.shape[0] != mu.shape[0]:
            raise ValueError(
                f"inconsistent mixture shapes: weights {w.shape}, means {mu.shape}, "
                f"variances {var.shape}"
            )
        if w.shape[0] < 1:
            raise ValueError("mixture needs at least one component")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {w.sum()!r}, not 1")
        if (w <= 0).any():
            raise ValueError("mixture weights must be positive")
        if (var < VARIANCE_FLOOR).any():
            raise ValueError(f"variance below floor {VARIANCE_FLOOR}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]


@dataclass(frozen=True)
class PcaModel:
    """Affine projection x -> basis @ (x - mean), rows sorted by variance.

    ``scale`` is set only by whitened fits; the basis itself always stays
    orthonormal.
    """

    mean: np.ndarray
    basis: np.ndarray
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        mean = _as_float_array(self.mean)
        basis = _as_float_array(self.basis)
        if mean.ndim != 1 or basis.ndim != 2 or basis.shape[1] != mean.shape[0]:
            raise ValueError(
                f"inconsistent projection shapes: mean {mean.shape}, basis {basis.shape}"
            )
        if basis.shape[0] > basis.shape[1]:
            raise ValueError(f"output dim {basis.shape[0]} exceeds input dim {basis.shape[1]}")
        gram = basis @ basis.T
        if not np.allclose(gram, np.eye(basis.shape[0]), atol=1e-6):
            raise ValueError("basis rows are not orthonormal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)
        if self.scale is not None:
            object.__setattr__(self, "scale", _as_float_array(self.scale))

    @property
    def input_dim(self):
        return self.basis.shape[1]

    @property
    def output_dim(self):
        return self.basis.shape[0]


@dataclass(frozen=True)
class FisherVector:
    """Encoded sequence or window: 2*K*d values (plus K if the weight block
    is enabled)."""

    values: np.ndarray
    video_id: str = ""
    window_index: Optional[int] = None

    def __post_init__(self):
        v = _as_float_array(self.values)
        if v.ndim != 1:
            raise ValueError(f"fisher vector must be 1-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("non-finite fisher vector values")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class LinearModel:
    """Per-class linear classifiers over Fisher vectors.

    For categorical tasks ``class_ids`` are the class labels and prediction is
    the score argmax; for multilabel tasks each row is one action unit's
    binary model, with optional co-occurrence reweighting data and
    per-unit landmark masks attached.
    """

    weights: np.ndarray
    biases: np.ndarray
    C: float
    class_ids: tuple
    task: str = "categorical"
    cooccurrence: Optional["object"] = None
    landmark_masks: Optional[dict] = None

    def __post_init__(self):
        w = _as_float_array(self.weights)
        b = _as_float_array(self.biases)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValueError(f"inconsistent model shapes: weights {w.shape}, biases {b.shape}")
        if len(self.class_ids) != w.shape[0]:
            raise ValueError("one class id per weight row required")
        if self.C <= 0:
            raise ValueError(f"regularization C must be positive, got {self.C}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "class_ids", tuple(self.class_ids))

    @property
    def dim(self):
        return self.weights.shape[1]

    def scores(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x @ self.weights.T + self.biases
