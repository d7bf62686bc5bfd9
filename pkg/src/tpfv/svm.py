"""Linear SVMs over Fisher vectors, trained by dual coordinate descent.

One binary hinge-loss model per class (one-vs-rest) or per action unit.  The
multi-label path adds per-unit landmark masks (trajectory selection) and a
co-occurrence reweighting of the raw scores estimated from training labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .datamodel import NUM_LANDMARKS, LinearModel


@dataclass(frozen=True)
class SvmConfig:
    """Solver settings.  The objective is
    0.5*||w||^2 + C * sum_i hinge(y_i * f(x_i)) with the bias carried as an
    extra regularized feature of value ``bias_scale``."""

    C: float = 100.0
    max_epochs: int = 1000
    tol: float = 1e-6
    seed: int = 0
    bias_scale: float = 1.0

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if self.max_epochs < 1 or self.tol <= 0:
            raise ValueError("max_epochs must be >= 1 and tol positive")


@dataclass(frozen=True)
class CoOccurrenceMatrix:
    """Empirical action-unit co-activation: matrix[i, j] = P(j active | i
    active) and priors[j] = P(j active)."""

    matrix: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        p = np.asarray(self.priors, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or p.shape != (m.shape[0],):
            raise ValueError(f"bad co-occurrence shapes: matrix {m.shape}, priors {p.shape}")
        if (m < 0).any() or (m > 1).any() or (p < 0).any() or (p > 1).any():
            raise ValueError("co-occurrence probabilities must lie in [0, 1]")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "priors", p)

    @property
    def n_units(self):
        return self.priors.shape[0]


def solve_dual(x, y, cfg: SvmConfig):
    """Dual coordinate descent for the L1-hinge linear SVM.

    x: (N, D) float matrix, y: (N,) labels in {-1, +1}.  Returns
    (w, b, alpha, objective_trace) where the trace holds the minimized dual
    objective 0.5*||w_aug||^2 - sum(alpha) after each epoch.  Coordinates are
    visited in a seeded random permutation per epoch, so solves are
    deterministic given the seed.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError(f"bad training shapes: x {x.shape}, y {y.shape}")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("labels must be -1/+1")
    n, dim = x.shape
    xa = np.hstack([x, np.full((n, 1), cfg.bias_scale)])
    qii = (xa * xa).sum(axis=1)
    alpha = np.zeros(n)
    w = np.zeros(dim + 1)
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for _ in range(cfg.max_epochs):
        worst = 0.0
        for i in rng.permutation(n):
            if qii[i] <= 0.0:
                continue
            g = y[i] * (w @ xa[i]) - 1.0
            if alpha[i] <= 0.0:
                pg = min(g, 0.0)
            elif alpha[i] >= cfg.C:
                pg = max(g, 0.0)
            else:
                pg = g
            worst = max(worst, abs(pg))
            if pg != 0.0:
                old = alpha[i]
                alpha[i] = min(max(old - g / qii[i], 0.0), cfg.C)
                if alpha[i] != old:
                    w += (alpha[i] - old) * y[i] * xa[i]
        trace.append(0.5 * (w @ w) - alpha.sum())
        if worst < cfg.tol:
            break
    return w[:-1], w[-1] * cfg.bias_scale, alpha, trace


def primal_objective(w, b, x, y, cfg: SvmConfig) -> float:
    """Objective the solver minimizes, for cross-checks against references."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    margins = 1.0 - y * (x @ w + b)
    hinge = np.maximum(margins, 0.0).sum()
    bias_coef = b / cfg.bias_scale if cfg.bias_scale != 0 else 0.0
    return 0.5 * (w @ w + bias_coef * bias_coef) + cfg.C * hinge


def train_binary(positives, negatives, cfg: SvmConfig = SvmConfig()):
    """Train one binary model; returns (weights, bias)."""
    pos = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise ValueError("both classes need at least one example")
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(pos.shape[0]), -np.ones(neg.shape[0])])
    w, b, _, _ = solve_dual(x, y, cfg)
    return w, b


def train_multiclass_ovr(vectors, labels, cfg: SvmConfig = SvmConfig()) -> LinearModel:
    """One-vs-rest training on categorical labels; prediction is the raw
    score argmax with ties going to the lowest class id."""
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels)
    if x.shape[0] != y.shape[0]:
        raise ValueError("one label per vector required")
    classes = sorted(set(int(c) for c in y))
    if len(classes) < 2:
        raise ValueError(f"need at least two classes, got {classes}")
    weights = np.empty((len(classes), x.shape[1]))
    biases = np.empty(len(classes))
    for row, cls in enumerate(classes):
        mask = y == cls
        if not mask.any():
            raise ValueError(f"class {cls} has no examples")
        weights[row], biases[row] = train_binary(x[mask], x[~mask], cfg)
    return LinearModel(
        weights=weights, biases=biases, C=cfg.C, class_ids=tuple(classes), task="categorical"
    )


def predict_multiclass(model: LinearModel, vectors) -> np.ndarray:
    scores = model.scores(np.atleast_2d(np.asarray(vectors, dtype=np.float64)))
    picks = scores.argmax(axis=1)
    return np.asarray([model.class_ids[p] for p in picks])


# --- trajectory selection ----------------------------------------------------

def load_au_region_table(path=None) -> dict:
    """Action unit -> landmark indices table; the packaged default follows
    the standard 68-point regional grouping.  A "*" key, when present, is
    the fallback mask for unlisted units."""
    if path is None:
        blob = resources.files("tpfv").joinpath("au_regions.json").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            blob = fh.read()
    raw = json.loads(blob)
    table = {}
    for key, indices in raw.items():
        idx = tuple(sorted(int(i) for i in indices))
        if any(i < 0 or i >= NUM_LANDMARKS for i in idx):
            raise ValueError(f"landmark index out of range in region table entry {key!r}")
        table["*" if key == "*" else int(key)] = idx
    return table


def select_trajectories_sf(au_index: int, table: Optional[dict] = None) -> tuple:
    """Landmark indices whose trajectories feed the given action unit's
    classifier."""
    if table is None:
        table = load_au_region_table()
    if au_index in table:
        return table[au_index]
    if "*" in table:
        return table["*"]
    raise ValueError(f"action unit {au_index} missing from region table")


# --- co-occurrence reweighting ------------------------------------------------

def estimate_cooccurrence(labels) -> CoOccurrenceMatrix:
    """Estimate P(j | i) and priors from an (N, A) binary label matrix;
    units that never occur get zero rows."""
    lab = np.asarray(labels, dtype=np.float64)
    if lab.ndim != 2:
        raise ValueError(f"labels must be (examples, units), got shape {lab.shape}")
    counts = lab.T @ lab
    occur = np.diag(counts).copy()
    matrix = np.zeros_like(counts)
    active = occur > 0
    matrix[active] = counts[active] / occur[active, None]
    priors = lab.mean(axis=0) if lab.shape[0] else np.zeros(lab.shape[1])
    return CoOccurrenceMatrix(matrix=matrix, priors=priors)


def apply_co_weighting(scores, cooc: CoOccurrenceMatrix, alpha: float) -> np.ndarray:
    """Nudge each unit's raw score by the sigmoid-gated evidence from the
    other units:

        s'_j = s_j + alpha * sum_{i != j} sigmoid(s_i) * (P[i, j] - p_j)

    alpha = 0 returns the scores unchanged.
    """
    s = np.asarray(scores, dtype=np.float64)
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    single = s.ndim == 1
    s2 = np.atleast_2d(s)
    if s2.shape[1] != cooc.n_units:
        raise ValueError(f"{s2.shape[1]} scores for {cooc.n_units} units")
    if alpha == 0:
        out = s2.copy()
    else:
        gap = cooc.matrix - cooc.priors[None, :]
        np.fill_diagonal(gap, 0.0)
        gate = 1.0 / (1.0 + np.exp(-s2))
        out = s2 + alpha * gate @ gap
    return out[0] if single else out
