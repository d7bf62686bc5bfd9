"""Trajectory-pooled Fisher vector pipeline for facial video classification.

Pools per-frame CNN feature maps along facial landmark trajectories,
encodes each sequence as a normalized Fisher vector over a diagonal
Gaussian mixture, and classifies with linear SVMs (multi-class and
multi-label action-unit variants), with cross-validation harnesses.
"""

__version__ = "0.1.0"
