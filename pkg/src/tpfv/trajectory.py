"""Landmark trajectories and symmetric temporal windows.

Each of the 68 tracked points becomes one trajectory across the whole
sequence.  Action-unit tasks carve the trajectories into fixed-length
symmetric windows centered on every interior frame; emotion tasks keep one
bundle spanning the whole sequence.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datamodel import NUM_LANDMARKS, LandmarkTrack


@dataclass(frozen=True)
class Trajectory:
    """One landmark tracked across frames; rows of ``points`` are
    (x, y, frame_index) with strictly increasing frame index."""

    landmark_index: int
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"trajectory points must be (length, 3), got {pts.shape}")
        if not (np.diff(pts[:, 2]) > 0).all():
            raise ValueError("trajectory frame indices must be strictly increasing")
        if not 0 <= self.landmark_index < NUM_LANDMARKS:
            raise ValueError(f"landmark index {self.landmark_index} out of range")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class WindowSpec:
    """Symmetric window geometry: even length W, centers every ``stride``
    frames over the interior of the sequence."""

    window_length: int = 16
    stride: int = 1

    def __post_init__(self):
        if self.window_length < 2 or self.window_length % 2 != 0:
            raise ValueError(f"window length must be even and >= 2, got {self.window_length}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")


@dataclass(frozen=True)
class TrajectoryBundle:
    """All 68 sub-trajectories over one frame range.

    ``points`` has shape (68, length, 2); ``frame_indices`` are the covered
    global frame indices.  Window bundles record their center frame and
    position in the window list; the whole-sequence bundle records neither.
    """

    points: np.ndarray
    frame_indices: np.ndarray
    center_frame: Optional[int] = None
    window_index: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        idx = np.asarray(self.frame_indices, dtype=np.int64)
        if pts.ndim != 3 or pts.shape[0] != NUM_LANDMARKS or pts.shape[2] != 2:
            raise ValueError(f"bundle points must be ({NUM_LANDMARKS}, length, 2), got {pts.shape}")
        if idx.shape != (pts.shape[1],):
            raise ValueError("one frame index per bundle frame required")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "frame_indices", idx)

    @property
    def length(self):
        return self.points.shape[1]


def build_trajectories(track: LandmarkTrack) -> list:
    """Turn a landmark track into 68 trajectories, one per tracked point."""
    t = track.frame_count
    frame_col = np.arange(t, dtype=np.float64)
    out = []
    for j in range(NUM_LANDMARKS):
        pts = np.column_stack([track.points[:, j, 0], track.points[:, j, 1], frame_col])
        out.append(Trajectory(landmark_index=j, points=pts))
    return out


def _stack(trajectories) -> np.ndarray:
    if len(trajectories) != NUM_LANDMARKS:
        raise ValueError(f"expected {NUM_LANDMARKS} trajectories, got {len(trajectories)}")
    lengths = {len(tr) for tr in trajectories}
    if len(lengths) != 1:
        raise ValueError(f"trajectories have mixed lengths {sorted(lengths)}")
    return np.stack([tr.points[:, :2] for tr in trajectories])


def split_windows(trajectories, spec: WindowSpec) -> list:
    """Cut the trajectories into symmetric windows of length W.

    A window centered on frame c covers frames [c - W/2, c + W/2 - 1]; only
    strictly interior centers are kept, so the first and last W/2 frames of
    the sequence never become centers.  Sequences no longer than W yield no
    windows (warned, not an error).
    """
    stacked = _stack(trajectories)
    n = stacked.shape[1]
    w = spec.window_length
    half = w // 2
    if n <= w:
        warnings.warn(f"sequence of {n} frames too short for {w}-frame windows")
        return []
    bundles = []
    for wi, center in enumerate(range(half, n - half, spec.stride)):
        lo = center - half
        bundles.append(
            TrajectoryBundle(
                points=stacked[:, lo : lo + w, :],
                frame_indices=np.arange(lo, lo + w),
                center_frame=center,
                window_index=wi,
            )
        )
    return bundles


def whole_sequence_bundle(trajectories) -> TrajectoryBundle:
    """One bundle covering every frame of the sequence."""
    stacked = _stack(trajectories)
    return TrajectoryBundle(
        points=stacked,
        frame_indices=np.arange(stacked.shape[1]),
        center_frame=None,
        window_index=None,
    )
