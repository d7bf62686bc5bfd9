"""Per-fold pipeline: load, pool, project, encode, classify.

Fitting functions only ever receive train-fold entries, so test data cannot
leak into PCA, mixture, or classifier estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import storage
from .config import RunConfig
from .datamodel import NUM_LANDMARKS, DatasetManifest, Label, LinearModel
from .evaluation import (
    EvalReport,
    confusion_counts,
    make_fixed_split,
    make_kfold,
    make_loao_folds,
    video_majority_rule,
)
from .fisher import encode
from .gmm import fit_gmm
from .pca import fit_pca, project
from .pooling import descriptor_matrix, pool_bundle
from .svm import (
    SvmConfig,
    estimate_cooccurrence,
    apply_co_weighting,
    load_au_region_table,
    predict_multiclass,
    select_trajectories_sf,
    train_binary,
    train_multiclass_ovr,
)
from .trajectory import build_trajectories, split_windows, whole_sequence_bundle


@dataclass
class VideoDescriptors:
    """Raw pooled descriptors of one video: one row per (window, landmark)."""

    video_id: str
    matrix: np.ndarray
    landmarks: np.ndarray
    windows: np.ndarray
    label: Label

    @property
    def window_ids(self):
        return sorted(set(int(w) for w in self.windows))


@dataclass
class FoldModels:
    pca: object
    gmm: object
    linear: LinearModel
    class_gmms: Optional[dict] = None
    em_log: object = None


def load_video(entry):
    features = storage.read_feature_maps(entry.feature_path)
    track = storage.read_landmarks(entry.landmark_path, expected_frames=features.frame_count)
    return features, track


def compute_descriptors(entry, cfg: RunConfig, use_windows: bool) -> VideoDescriptors:
    features, track = load_video(entry)
    trajectories = build_trajectories(track)
    if use_windows:
        bundles = split_windows(trajectories, cfg.window_spec)
        if not bundles:
            raise ValueError(
                f"video {entry.video_id!r} has {track.frame_count} frames, too short for "
                f"{cfg.window_spec.window_length}-frame windows"
            )
    else:
        bundles = [whole_sequence_bundle(trajectories)]
    blocks = []
    landmarks = []
    windows = []
    for b in bundles:
        descs = pool_bundle(features, b, cfg.pooling)
        blocks.append(descriptor_matrix(descs))
        landmarks.extend(d.landmark_index for d in descs)
        windows.extend(0 if b.window_index is None else b.window_index for _ in descs)
    return VideoDescriptors(
        video_id=entry.video_id,
        matrix=np.vstack(blocks),
        landmarks=np.asarray(landmarks),
        windows=np.asarray(windows),
        label=entry.label,
    )


def _au_masks(manifest: DatasetManifest, cfg: RunConfig):
    """Landmark mask per label bit; all 68 unless trajectory selection is on."""
    full = tuple(range(NUM_LANDMARKS))
    if not cfg.use_sf:
        return {bit: full for bit in range(manifest.num_classes)}
    if manifest.au_ids is None:
        raise ValueError("trajectory selection needs au_ids in the manifest")
    table = load_au_region_table(cfg.au_region_table)
    return {
        bit: select_trajectories_sf(au, table) for bit, au in enumerate(manifest.au_ids)
    }


def _encode_rows(vd: VideoDescriptors, projected, gmm_model, cfg: RunConfig, mask=None):
    """One Fisher vector per window of the video, optionally restricted to a
    landmark mask."""
    out = []
    for w in vd.window_ids:
        rows = vd.windows == w
        if mask is not None:
            rows = rows & np.isin(vd.landmarks, mask)
        fv = encode(
            gmm_model,
            projected[rows],
            video_id=vd.video_id,
            window_index=w,
            include_weight_block=cfg.include_weight_block,
        )
        out.append(fv.values)
    return np.asarray(out)


def _video_encoding(vd, projected, models, cfg: RunConfig):
    """Whole-video encoding; per-class mixtures are concatenated."""
    if models.class_gmms:
        parts = [
            _encode_rows(vd, projected, models.class_gmms[c], cfg)[0]
            for c in sorted(models.class_gmms)
        ]
        return np.concatenate(parts)
    return _encode_rows(vd, projected, models.gmm, cfg)[0]


def fit_fold_categorical(train_descs, cfg: RunConfig) -> FoldModels:
    train_matrix = np.vstack([vd.matrix for vd in train_descs])
    pca_model = fit_pca(train_matrix, cfg.pca_dim, whiten=cfg.pca_whiten, seed=cfg.pca_seed)
    projected = {vd.video_id: project(pca_model, vd.matrix) for vd in train_descs}

    class_gmms = None
    if cfg.per_class_gmm:
        class_gmms = {}
        em_log = None
        for cls in sorted({vd.label.class_id for vd in train_descs}):
            rows = np.vstack([projected[vd.video_id] for vd in train_descs
                              if vd.label.class_id == cls])
            class_gmms[cls], _ = fit_gmm(rows, cfg.em)
        gmm_model = None
    else:
        gmm_model, em_log = fit_gmm(np.vstack([projected[vd.video_id] for vd in train_descs]),
                                    cfg.em)

    models = FoldModels(pca=pca_model, gmm=gmm_model, linear=None, class_gmms=class_gmms,
                        em_log=em_log)
    fvs = np.asarray([_video_encoding(vd, projected[vd.video_id], models, cfg)
                      for vd in train_descs])
    labels = np.asarray([vd.label.class_id for vd in train_descs])
    models.linear = train_multiclass_ovr(fvs, labels, cfg.svm)
    return models


def predict_categorical(models: FoldModels, vd: VideoDescriptors, cfg: RunConfig):
    projected = project(models.pca, vd.matrix)
    if models.class_gmms or len(vd.window_ids) == 1:
        fv = _video_encoding(vd, projected, models, cfg)
        return int(predict_multiclass(models.linear, fv[None])[0]), None
    # windowed video: one prediction per window
    fvs = _encode_rows(vd, projected, models.gmm, cfg)
    window_preds = predict_multiclass(models.linear, fvs)
    counts = np.bincount(window_preds)
    return int(counts.argmax()), window_preds


def fit_fold_multilabel(train_descs, manifest, cfg: RunConfig) -> FoldModels:
    n_units = manifest.num_classes
    masks = _au_masks(manifest, cfg)
    train_matrix = np.vstack([vd.matrix for vd in train_descs])
    pca_model = fit_pca(train_matrix, cfg.pca_dim, whiten=cfg.pca_whiten, seed=cfg.pca_seed)
    projected = {vd.video_id: project(pca_model, vd.matrix) for vd in train_descs}
    gmm_model, em_log = fit_gmm(
        np.vstack([projected[vd.video_id] for vd in train_descs]), cfg.em
    )

    window_labels = []
    per_unit_fvs = {bit: [] for bit in range(n_units)}
    for vd in train_descs:
        n_windows = len(vd.window_ids)
        window_labels.extend([vd.label.au_bits] * n_windows)
        for bit in range(n_units):
            per_unit_fvs[bit].append(
                _encode_rows(vd, projected[vd.video_id], gmm_model, cfg, mask=masks[bit])
            )
    window_labels = np.asarray(window_labels)

    dim = per_unit_fvs[0][0].shape[1]
    weights = np.empty((n_units, dim))
    biases = np.empty(n_units)
    for bit in range(n_units):
        x = np.vstack(per_unit_fvs[bit])
        y = window_labels[:, bit]
        if y.min() == y.max():
            raise ValueError(f"unit bit {bit} has a single class in the training fold")
        weights[bit], biases[bit] = train_binary(x[y == 1], x[y == 0], cfg.svm)

    cooc = estimate_cooccurrence(window_labels) if cfg.use_co else None
    linear = LinearModel(
        weights=weights,
        biases=biases,
        C=cfg.svm.C,
        class_ids=tuple(manifest.au_ids) if manifest.au_ids else tuple(range(n_units)),
        task="multilabel",
        cooccurrence=cooc,
        landmark_masks=masks if cfg.use_sf else None,
    )
    return FoldModels(pca=pca_model, gmm=gmm_model, linear=linear, em_log=em_log)


def predict_multilabel(models: FoldModels, vd: VideoDescriptors, manifest, cfg: RunConfig):
    """Per-window scores and binary predictions: (windows, units) arrays."""
    masks = _au_masks(manifest, cfg)
    projected = project(models.pca, vd.matrix)
    n_units = manifest.num_classes
    cols = []
    for bit in range(n_units):
        fvs = _encode_rows(vd, projected, models.gmm, cfg, mask=masks[bit])
        cols.append(fvs @ models.linear.weights[bit] + models.linear.biases[bit])
    scores = np.column_stack(cols)
    if cfg.use_co and models.linear.cooccurrence is not None:
        scores = apply_co_weighting(scores, models.linear.cooccurrence, cfg.co_alpha)
    return scores, (scores > 0).astype(int)


def make_fold_plan(manifest: DatasetManifest, cfg: RunConfig):
    kind = cfg.protocol.get("kind", "loao")
    if kind == "loao":
        return make_loao_folds(manifest)
    if kind == "kfold":
        return make_kfold(manifest, k=int(cfg.protocol.get("k", 10)),
                          seed=int(cfg.protocol.get("seed", 0)))
    return make_fixed_split(
        manifest,
        train=int(cfg.protocol.get("train", 40)),
        val=int(cfg.protocol.get("val", 5)),
        test=int(cfg.protocol.get("test", 5)),
        seed=int(cfg.protocol.get("seed", 0)),
    )


def run_fold(manifest: DatasetManifest, fold, cfg: RunConfig):
    """Fit on the fold's train videos, evaluate on its test videos.

    Returns (models, fold_stats) where stats carry counts, predictions and
    per-window outcomes for report assembly.
    """
    use_windows = cfg.windows_for_task(manifest.task)
    train_entries = manifest.entries_for_videos(fold.train_videos)
    test_entries = manifest.entries_for_videos(fold.test_videos)
    train_descs = [compute_descriptors(e, cfg, use_windows) for e in train_entries]

    if manifest.task == "categorical":
        models = fit_fold_categorical(train_descs, cfg)
        preds, labels = [], []
        n_correct = 0
        for entry in test_entries:
            vd = compute_descriptors(entry, cfg, use_windows)
            pred, window_preds = predict_categorical(models, vd, cfg)
            preds.append(pred)
            labels.append(entry.label.class_id)
            if cfg.majority_rule and window_preds is not None:
                n_correct += int(video_majority_rule(window_preds, entry.label.class_id))
            else:
                n_correct += int(pred == entry.label.class_id)
        stats = {
            "n_test": len(test_entries),
            "n_correct": n_correct,
            "predictions": preds,
            "labels": labels,
        }
        return models, stats

    models = fit_fold_multilabel(train_descs, manifest, cfg)
    all_preds, all_labels = [], []
    for entry in test_entries:
        vd = compute_descriptors(entry, cfg, use_windows)
        _, preds = predict_multilabel(models, vd, manifest, cfg)
        all_preds.append(preds)
        all_labels.append(np.tile(entry.label.au_bits, (preds.shape[0], 1)))
    stats = {
        "n_test": len(test_entries),
        "window_predictions": np.vstack(all_preds),
        "window_labels": np.vstack(all_labels),
    }
    return models, stats


def _fold_job(args):
    manifest, fold, cfg = args
    return run_fold(manifest, fold, cfg)


def run_protocol(manifest: DatasetManifest, cfg: RunConfig, workers: int = 1,
                 fold_callback=None):
    """Run the configured protocol over every fold; returns (report, models
    per fold).  Folds are independent jobs; results are assembled in fold
    order, so the report does not depend on worker count."""
    from .evaluation import f1_segment

    plan = make_fold_plan(manifest, cfg)
    if workers > 1 and len(plan) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fold_job, [(manifest, f, cfg) for f in plan.folds]))
    else:
        results = [run_fold(manifest, f, cfg) for f in plan.folds]

    report = EvalReport(protocol=plan.protocol, task=manifest.task,
                        metadata={"config_hash": cfg.config_hash(), "n_folds": len(plan)})
    fold_models = [models for models, _ in results]
    if manifest.task == "categorical":
        counts = np.zeros((manifest.num_classes, manifest.num_classes), dtype=np.int64)
        for i, (models, stats) in enumerate(results):
            report.add_fold(i, n_correct=stats["n_correct"], n_test=stats["n_test"])
            counts += confusion_counts(stats["predictions"], stats["labels"],
                                       manifest.num_classes)
            if fold_callback:
                fold_callback(i, models, stats)
        report.confusion_counts = counts
    else:
        preds, labels = [], []
        for i, (models, stats) in enumerate(results):
            fold_f1 = f1_segment(stats["window_predictions"], stats["window_labels"])
            report.add_fold(i, n_test=stats["n_test"],
                            extra={"average_f1": fold_f1["average_f1"]})
            preds.append(stats["window_predictions"])
            labels.append(stats["window_labels"])
            if fold_callback:
                fold_callback(i, models, stats)
        report.per_au = f1_segment(np.vstack(preds), np.vstack(labels))
    return report, fold_models
