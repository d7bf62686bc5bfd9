"""Trajectory pooling: averaging feature-map activations along landmarks.

A fixed pixel region around each landmark is rescaled from source-image to
feature-map coordinates, spatially averaged per frame and channel, then
averaged along the trajectory, giving one C-dimensional descriptor per
landmark per bundle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datamodel import NUM_LANDMARKS, FeatureMapSequence
from .trajectory import TrajectoryBundle

_REDUCERS = ("mean", "sum")


class PoolingError(Exception):
    pass


@dataclass(frozen=True)
class PoolingSpec:
    """Pooling region in source pixels plus the aggregation operators."""

    region_height: int = 64
    region_width: int = 64
    spatial_reduce: str = "mean"
    temporal_reduce: str = "mean"

    def __post_init__(self):
        if self.region_height < 1 or self.region_width < 1:
            raise ValueError("pooling region must be at least 1x1")
        if self.spatial_reduce not in _REDUCERS or self.temporal_reduce not in _REDUCERS:
            raise ValueError(f"reducers must be one of {_REDUCERS}")


@dataclass(frozen=True)
class TrajectoryDescriptor:
    """Pooled activations for one landmark trajectory in one bundle."""

    values: np.ndarray
    video_id: str
    landmark_index: int
    window_index: int = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"descriptor must be a vector, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("non-finite descriptor values")
        object.__setattr__(self, "values", v)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def scale_region(center, spec: PoolingSpec, source_dims, map_dims):
    """Map a source-pixel region around ``center`` = (x, y) into integer
    feature-map bounds (y0, y1, x0, x1), end-exclusive.

    Extents scale by map/source per axis, round half up with a floor of one
    cell, and the box is shifted to stay inside the map, so it is never empty.
    """
    source_h, source_w = source_dims
    map_h, map_w = map_dims
    if map_h < 1 or map_w < 1:
        raise ValueError("feature map dimensions must be positive")
    ry = map_h / source_h
    rx = map_w / source_w
    h = max(1, _round_half_up(spec.region_height * ry))
    w = max(1, _round_half_up(spec.region_width * rx))
    h = min(h, map_h)
    w = min(w, map_w)
    cy = center[1] * ry
    cx = center[0] * rx
    y0 = _round_half_up(cy - h / 2.0)
    x0 = _round_half_up(cx - w / 2.0)
    y0 = min(max(y0, 0), map_h - h)
    x0 = min(max(x0, 0), map_w - w)
    return y0, y0 + h, x0, x0 + w


def pool_bundle(features: FeatureMapSequence, bundle: TrajectoryBundle, spec: PoolingSpec) -> list:
    """Pool one bundle against its video's feature maps.

    Per trajectory and frame: spatial reduction of each channel over the
    scaled region at that frame's landmark point; then temporal reduction
    along the bundle.  Returns 68 descriptors.
    """
    idx = bundle.frame_indices
    if idx.min() < 0 or idx.max() >= features.frame_count:
        raise PoolingError(
            f"bundle frames [{idx.min()}, {idx.max()}] outside video "
            f"{features.video_id!r} with {features.frame_count} frames"
        )
    maps = features.frames
    source_dims = (features.source_height, features.source_width)
    map_dims = (features.map_height, features.map_width)
    t_len = bundle.length
    out = []
    per_frame = np.empty((t_len, features.channels), dtype=np.float64)
    for j in range(NUM_LANDMARKS):
        for ti in range(t_len):
            x, y = bundle.points[j, ti]
            y0, y1, x0, x1 = scale_region((x, y), spec, source_dims, map_dims)
            patch = maps[idx[ti], :, y0:y1, x0:x1].astype(np.float64)
            if spec.spatial_reduce == "mean":
                per_frame[ti] = patch.mean(axis=(1, 2))
            else:
                per_frame[ti] = patch.sum(axis=(1, 2))
        values = per_frame.mean(axis=0) if spec.temporal_reduce == "mean" else per_frame.sum(axis=0)
        out.append(
            TrajectoryDescriptor(
                values=values,
                video_id=features.video_id,
                landmark_index=j,
                window_index=bundle.window_index,
            )
        )
    return out


def descriptor_matrix(descriptors) -> np.ndarray:
    """Stack descriptors into an (n, C) matrix."""
    return np.stack([d.values for d in descriptors])
