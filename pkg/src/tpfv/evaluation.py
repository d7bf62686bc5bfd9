"""Validation protocols and metrics.

Fold plans partition videos by actor so no identity leaks between training
and test data: leave-one-actor-out, actor-disjoint k-fold, and a fixed
train/validation/test actor split.  Metrics: accuracy, row-normalized
confusion matrices, per-unit segment F1, and the strict frame-majority
video rule.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .datamodel import DatasetManifest


@dataclass(frozen=True)
class Fold:
    train_videos: tuple
    val_videos: tuple
    test_videos: tuple

    def __post_init__(self):
        parts = [set(self.train_videos), set(self.val_videos), set(self.test_videos)]
        total = sum(len(p) for p in parts)
        if len(parts[0] | parts[1] | parts[2]) != total:
            raise ValueError("a video appears in two parts of one fold")


@dataclass(frozen=True)
class FoldPlan:
    protocol: str
    folds: tuple

    def __len__(self):
        return len(self.folds)


def _videos_by_actor(manifest: DatasetManifest) -> dict:
    groups = {}
    for e in manifest.entries:
        groups.setdefault(e.actor_id, []).append(e.video_id)
    return groups


def _actor_fold(groups, test_actors, val_actors=()):
    test = [v for a in test_actors for v in groups[a]]
    val = [v for a in val_actors for v in groups[a]]
    held = set(test) | set(val)
    train = [v for a in groups for v in groups[a] if v not in held and a not in test_actors and a not in val_actors]
    return Fold(train_videos=tuple(train), val_videos=tuple(val), test_videos=tuple(test))


def make_loao_folds(manifest: DatasetManifest) -> FoldPlan:
    """Leave-one-actor-out: one fold per actor, testing all of that actor's
    videos."""
    groups = _videos_by_actor(manifest)
    actors = sorted(groups)
    if len(actors) < 2:
        raise ValueError(f"leave-one-actor-out needs at least 2 actors, got {len(actors)}")
    folds = tuple(_actor_fold(groups, (a,)) for a in actors)
    return FoldPlan(protocol="loao", folds=folds)


def make_kfold(manifest: DatasetManifest, k: int = 10, seed: int = 0) -> FoldPlan:
    """Actor-disjoint k-fold: actors shuffled by seed and split into k
    near-equal groups (sizes differ by at most one actor)."""
    groups = _videos_by_actor(manifest)
    actors = sorted(groups)
    if k < 2 or k > len(actors):
        raise ValueError(f"k={k} not in [2, {len(actors)}] for {len(actors)} actors")
    rng = np.random.default_rng(seed)
    shuffled = [actors[i] for i in rng.permutation(len(actors))]
    parts = np.array_split(np.arange(len(shuffled)), k)
    folds = tuple(_actor_fold(groups, tuple(shuffled[i] for i in part)) for part in parts)
    return FoldPlan(protocol=f"kfold{k}", folds=folds)


def make_fixed_split(manifest: DatasetManifest, train: int = 40, val: int = 5,
                     test: int = 5, seed: int = 0) -> FoldPlan:
    """One fold with disjoint actor groups of the given sizes; leftover
    actors are excluded (warned)."""
    groups = _videos_by_actor(manifest)
    actors = sorted(groups)
    need = train + val + test
    if len(actors) < need:
        raise ValueError(f"{len(actors)} actors cannot fill a {train}/{val}/{test} split")
    rng = np.random.default_rng(seed)
    shuffled = [actors[i] for i in rng.permutation(len(actors))]
    train_a = shuffled[:train]
    val_a = shuffled[train : train + val]
    test_a = shuffled[train + val : need]
    leftover = shuffled[need:]
    if leftover:
        warnings.warn(f"fixed split leaves {len(leftover)} actors unused: {sorted(leftover)}")
    test_v = [v for a in test_a for v in groups[a]]
    val_v = [v for a in val_a for v in groups[a]]
    train_v = [v for a in train_a for v in groups[a]]
    fold = Fold(train_videos=tuple(train_v), val_videos=tuple(val_v), test_videos=tuple(test_v))
    return FoldPlan(protocol="fixed", folds=(fold,))


# --- metrics -----------------------------------------------------------------

def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    t = np.asarray(labels)
    if p.shape != t.shape:
        raise ValueError(f"prediction/label length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("no predictions")
    return float((p == t).mean())


def confusion_counts(predictions, labels, num_classes: int) -> np.ndarray:
    p = np.asarray(predictions, dtype=np.int64)
    t = np.asarray(labels, dtype=np.int64)
    if p.shape != t.shape:
        raise ValueError(f"prediction/label length mismatch: {p.shape} vs {t.shape}")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return counts


def normalize_confusion(counts) -> np.ndarray:
    """Row-normalize a count matrix; empty rows stay zero."""
    counts = np.asarray(counts, dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    out = np.zeros_like(counts)
    np.divide(counts, sums, out=out, where=sums > 0)
    return out


def f1_segment(predictions, labels):
    """Per-unit precision/recall/F1 over temporal window units.

    Inputs are aligned (windows, units) binary matrices.  F1 is zero when a
    unit has no true or predicted positives at all.  Returns a dict with
    per-unit arrays and the macro average.
    """
    p = np.asarray(predictions, dtype=np.int64)
    t = np.asarray(labels, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 2:
        raise ValueError(f"misaligned windows: predictions {p.shape}, labels {t.shape}")
    tp = ((p == 1) & (t == 1)).sum(axis=0).astype(np.float64)
    fp = ((p == 1) & (t == 0)).sum(axis=0).astype(np.float64)
    fn = ((p == 0) & (t == 1)).sum(axis=0).astype(np.float64)
    precision = np.zeros(p.shape[1])
    recall = np.zeros(p.shape[1])
    np.divide(tp, tp + fp, out=precision, where=(tp + fp) > 0)
    np.divide(tp, tp + fn, out=recall, where=(tp + fn) > 0)
    f1 = np.zeros(p.shape[1])
    denom = precision + recall
    np.divide(2 * precision * recall, denom, out=f1, where=denom > 0)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "average_f1": float(f1.mean()),
    }


def video_majority_rule(frame_predictions, video_label) -> bool:
    """A video counts as correct iff strictly more than half of its frame
    predictions match the label."""
    p = np.asarray(frame_predictions)
    if p.size == 0:
        raise ValueError("need at least one frame prediction")
    return bool((p == video_label).sum() * 2 > p.size)


# --- report ------------------------------------------------------------------

@dataclass
class EvalReport:
    """Cross-validation outcome: per-fold counts plus aggregate metrics.

    The aggregate accuracy is total correct over total tested, which equals
    the fold-size-weighted mean of per-fold accuracies exactly.
    """

    protocol: str
    task: str
    fold_results: list = field(default_factory=list)
    confusion_counts: Optional[np.ndarray] = None
    per_au: Optional[dict] = None
    metadata: dict = field(default_factory=dict)

    def add_fold(self, index, n_correct=None, n_test=None, extra=None):
        rec = {"fold": int(index)}
        if n_test is not None:
            rec["n_test"] = int(n_test)
        if n_correct is not None:
            rec["n_correct"] = int(n_correct)
            rec["accuracy"] = (n_correct / n_test) if n_test else 0.0
        if extra:
            rec.update(extra)
        self.fold_results.append(rec)

    @property
    def aggregate_accuracy(self):
        totals = [(r.get("n_correct"), r.get("n_test")) for r in self.fold_results]
        if any(c is None for c, _ in totals):
            return None
        correct = sum(c for c, _ in totals)
        tested = sum(n for _, n in totals)
        return correct / tested if tested else 0.0

    @property
    def confusion(self):
        if self.confusion_counts is None:
            return None
        return normalize_confusion(self.confusion_counts)

    def to_dict(self) -> dict:
        doc = {
            "protocol": self.protocol,
            "task": self.task,
            "folds": self.fold_results,
            "metadata": self.metadata,
        }
        if self.aggregate_accuracy is not None:
            doc["aggregate_accuracy"] = self.aggregate_accuracy
        if self.confusion_counts is not None:
            doc["confusion_counts"] = np.asarray(self.confusion_counts).tolist()
            doc["confusion"] = self.confusion.tolist()
        if self.per_au is not None:
            doc["per_au"] = {
                k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.per_au.items()
            }
        return doc

    def save(self, out_dir):
        out_dir = __import__("pathlib").Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.confusion_counts is not None:
            with open(out_dir / "confusion.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                for row in self.confusion:
                    writer.writerow([f"{v:.10f}" for v in row])

    def save_heatmap(self, path):
        """Optional confusion heat map; needs matplotlib."""
        if self.confusion_counts is None:
            raise ValueError("no confusion matrix in this report")
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4.5))
        im = ax.imshow(self.confusion, vmin=0.0, vmax=1.0, cmap="viridis")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("predicted")
        ax.set_ylabel("actual")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
