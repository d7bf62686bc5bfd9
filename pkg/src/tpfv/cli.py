"""Command-line entry point.

Subcommands: pool, fit, encode, train, evaluate, selftest.  One JSON config
drives all stages; flags override config keys.  Exit codes: 0 ok, 1
pipeline failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, storage
from .config import ConfigError, RunConfig, load_config_file
from .datamodel import LinearModel
from .pipeline import (
    compute_descriptors,
    make_fold_plan,
    run_protocol,
    _au_masks,
    _encode_rows,
)
from .svm import SvmConfig, estimate_cooccurrence, train_binary, train_multiclass_ovr


def _fail(stage, message, code=1):
    print(json.dumps({"error": str(message), "stage": stage}), file=sys.stderr)
    return code


def _write_run_manifest(out_dir: Path, command: str, cfg: RunConfig):
    doc = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "versions": {
            "tpfv": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outputs_exist(out_dir: Path, names) -> bool:
    return all((out_dir / n).exists() for n in names)


def _skip_notice(command, out_dir):
    print(f"{command}: outputs already present in {out_dir}, skipping (use --force to rerun)")


def _load_all_descriptors(manifest, cfg):
    use_windows = cfg.windows_for_task(manifest.task)
    return [compute_descriptors(e, cfg, use_windows) for e in manifest.entries]


def cmd_pool(cfg: RunConfig, out_dir: Path, force: bool) -> int:
    outputs = ["descriptors.tpfv", "descriptors_index.json"]
    if not force and _outputs_exist(out_dir, outputs):
        _skip_notice("pool", out_dir)
        return 0
    manifest = storage.read_manifest(cfg.manifest)
    descs = _load_all_descriptors(manifest, cfg)
    matrix = np.vstack([vd.matrix for vd in descs])
    index = []
    for vd in descs:
        for lm, w in zip(vd.landmarks, vd.windows):
            index.append({"video_id": vd.video_id, "landmark_index": int(lm),
                          "window_index": int(w)})
    storage.write_tensor(out_dir / "descriptors.tpfv", matrix.astype(np.float64))
    with open(out_dir / "descriptors_index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh)
    print(f"pool: wrote {matrix.shape[0]} descriptors of dimension {matrix.shape[1]}")
    return 0


def cmd_fit(cfg: RunConfig, out_dir: Path, force: bool) -> int:
    from .gmm import fit_gmm
    from .pca import fit_pca, project

    outputs = ["pca.tpfv", "gmm.tpfv", "gmm_log.jsonl"]
    if not force and _outputs_exist(out_dir, outputs):
        _skip_notice("fit", out_dir)
        return 0
    manifest = storage.read_manifest(cfg.manifest)
    desc_file = out_dir / "descriptors.tpfv"
    if desc_file.exists():
        matrix, _ = storage.read_tensor(desc_file)
    else:
        matrix = np.vstack([vd.matrix for vd in _load_all_descriptors(manifest, cfg)])
    pca_model = fit_pca(matrix, cfg.pca_dim, whiten=cfg.pca_whiten, seed=cfg.pca_seed)
    gmm_model, log = fit_gmm(project(pca_model, matrix), cfg.em)
    storage.save_pca(out_dir / "pca.tpfv", pca_model)
    storage.save_gmm(out_dir / "gmm.tpfv", gmm_model)
    _write_em_log(out_dir / "gmm_log.jsonl", log)
    print(f"fit: pca {pca_model.input_dim}->{pca_model.output_dim}, "
          f"gmm {gmm_model.n_components} components, "
          f"{log.n_iters} iterations{' (converged)' if log.converged else ''}")
    return 0


def _write_em_log(path, log):
    with open(path, "w", encoding="utf-8") as fh:
        for i, ll in enumerate(log.mean_log_likelihood):
            fh.write(json.dumps({"iteration": i, "mean_log_likelihood": ll}) + "\n")
        for event in log.reseeded:
            fh.write(json.dumps({"reseeded_component": event["component"],
                                 "iteration": event["iteration"]}) + "\n")


def cmd_encode(cfg: RunConfig, out_dir: Path, force: bool) -> int:
    from .pca import project

    manifest = storage.read_manifest(cfg.manifest)
    per_au = manifest.task == "multilabel" and cfg.use_sf
    outputs = ["fv.tpfv", "fv_index.json"]
    if per_au:
        outputs += [f"fv_au{au}.tpfv" for au in manifest.au_ids]
    if not force and _outputs_exist(out_dir, outputs):
        _skip_notice("encode", out_dir)
        return 0
    if not (out_dir / "pca.tpfv").exists() or not (out_dir / "gmm.tpfv").exists():
        raise RuntimeError("encode needs pca.tpfv and gmm.tpfv; run fit first")
    pca_model = storage.load_pca(out_dir / "pca.tpfv")
    gmm_model = storage.load_gmm(out_dir / "gmm.tpfv")
    descs = _load_all_descriptors(manifest, cfg)

    rows, index = [], []
    for vd in descs:
        projected = project(pca_model, vd.matrix)
        fvs = _encode_rows(vd, projected, gmm_model, cfg)
        rows.append(fvs)
        index.extend({"video_id": vd.video_id, "window_index": int(w)} for w in vd.window_ids)
    storage.write_tensor(out_dir / "fv.tpfv", np.vstack(rows))
    with open(out_dir / "fv_index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh)

    if per_au:
        masks = _au_masks(manifest, cfg)
        for bit, au in enumerate(manifest.au_ids):
            rows = []
            for vd in descs:
                projected = project(pca_model, vd.matrix)
                rows.append(_encode_rows(vd, projected, gmm_model, cfg, mask=masks[bit]))
            storage.write_tensor(out_dir / f"fv_au{au}.tpfv", np.vstack(rows))
    print(f"encode: wrote {len(index)} fisher vectors")
    return 0


def cmd_train(cfg: RunConfig, out_dir: Path, force: bool) -> int:
    outputs = ["linear.tpfv"]
    if not force and _outputs_exist(out_dir, outputs):
        _skip_notice("train", out_dir)
        return 0
    manifest = storage.read_manifest(cfg.manifest)
    if not (out_dir / "fv.tpfv").exists():
        raise RuntimeError("train needs fv.tpfv; run encode first")
    fvs, _ = storage.read_tensor(out_dir / "fv.tpfv")
    with open(out_dir / "fv_index.json", "r", encoding="utf-8") as fh:
        index = json.load(fh)
    label_of = {e.video_id: e.label for e in manifest.entries}

    if manifest.task == "categorical":
        labels = np.asarray([label_of[r["video_id"]].class_id for r in index])
        model = train_multiclass_ovr(fvs, labels, cfg.svm)
    else:
        bits = np.asarray([label_of[r["video_id"]].au_bits for r in index])
        n_units = manifest.num_classes
        weights = np.empty((n_units, fvs.shape[1]))
        biases = np.empty(n_units)
        for bit in range(n_units):
            x = fvs
            if cfg.use_sf:
                au = manifest.au_ids[bit]
                x, _ = storage.read_tensor(out_dir / f"fv_au{au}.tpfv")
            y = bits[:, bit]
            weights[bit], biases[bit] = train_binary(x[y == 1], x[y == 0], cfg.svm)
        model = LinearModel(
            weights=weights,
            biases=biases,
            C=cfg.svm.C,
            class_ids=manifest.au_ids if manifest.au_ids else tuple(range(n_units)),
            task="multilabel",
            cooccurrence=estimate_cooccurrence(bits) if cfg.use_co else None,
            landmark_masks=_au_masks(manifest, cfg) if cfg.use_sf else None,
        )
    storage.save_linear_model(out_dir / "linear.tpfv", model)
    print(f"train: wrote {model.weights.shape[0]} linear models of dimension {model.dim}")
    return 0


def cmd_evaluate(cfg: RunConfig, out_dir: Path, force: bool, workers: int) -> int:
    outputs = ["report.json"]
    if not force and _outputs_exist(out_dir, outputs):
        _skip_notice("evaluate", out_dir)
        return 0
    manifest = storage.read_manifest(cfg.manifest)
    models_dir = out_dir / "models"
    logs_dir = out_dir / "logs"
    models_dir.mkdir(parents=True, exist_ok=True)
    logs_dir.mkdir(parents=True, exist_ok=True)
    report, fold_models = run_protocol(manifest, cfg, workers=workers)
    for i, models in enumerate(fold_models):
        storage.save_pca(models_dir / f"fold_{i:02d}_pca.tpfv", models.pca)
        if models.class_gmms:
            for cls, g in sorted(models.class_gmms.items()):
                storage.save_gmm(models_dir / f"fold_{i:02d}_gmm_class{cls}.tpfv", g)
        else:
            storage.save_gmm(models_dir / f"fold_{i:02d}_gmm.tpfv", models.gmm)
        storage.save_linear_model(models_dir / f"fold_{i:02d}_linear.tpfv", models.linear)
        if models.em_log is not None:
            _write_em_log(logs_dir / f"fold_{i:02d}_gmm.jsonl", models.em_log)
    report.save(out_dir)
    if report.aggregate_accuracy is not None:
        print(f"evaluate: {report.protocol}, accuracy {report.aggregate_accuracy:.4f}")
    else:
        print(f"evaluate: {report.protocol}, average F1 {report.per_au['average_f1']:.4f}")
    return 0


def _selftest_checks():
    import tempfile

    import numpy as np

    from .datamodel import GmmModel, LandmarkTrack
    from .fisher import encode, encode_raw
    from .gmm import EmConfig, fit_gmm
    from .pca import fit_pca, project
    from .svm import CoOccurrenceMatrix, SvmConfig, apply_co_weighting, train_binary
    from .trajectory import WindowSpec, build_trajectories, split_windows

    rng = np.random.default_rng(0)

    def tensor_round_trip():
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "t.tpfv"
            arr = rng.normal(size=(3, 4)).astype(np.float32)
            storage.write_tensor(path, arr, layer_tag="conv5")
            first = path.read_bytes()
            loaded, header = storage.read_tensor(path)
            storage.write_tensor(path, loaded,
                                 **{k: v for k, v in header.items() if k not in ("dtype", "shape")})
            assert path.read_bytes() == first
            assert np.array_equal(loaded, arr)

    def window_rule():
        pts = np.tile(rng.uniform(10, 100, size=(1, 68, 2)), (100, 1, 1))
        trajs = build_trajectories(LandmarkTrack(video_id="v", points=pts))
        bundles = split_windows(trajs, WindowSpec(window_length=16))
        assert len(bundles) == 84
        assert bundles[0].center_frame == 8 and bundles[-1].center_frame == 91

    def fisher_at_the_mean():
        model = GmmModel(weights=[1.0], means=[[0.0, 0.0]], variances=[[1.0, 1.0]])
        raw = encode_raw(model, np.zeros((5, 2)))
        assert np.array_equal(raw[:2], np.zeros(2))
        assert np.allclose(raw[2:], -1.0 / np.sqrt(2.0), atol=1e-12)

    def fisher_invariances():
        w = rng.uniform(0.3, 1.0, size=3)
        model = GmmModel(weights=w / w.sum(), means=rng.normal(size=(3, 4)),
                         variances=rng.uniform(0.5, 2.0, size=(3, 4)))
        x = rng.normal(size=(9, 4))
        a = encode(model, x).values
        assert np.array_equal(a, encode(model, np.vstack([x, x])).values)
        assert np.array_equal(a, encode(model, x[rng.permutation(9)]).values)
        assert abs(np.linalg.norm(a) - 1.0) < 1e-9

    def em_monotone():
        x = rng.normal(size=(150, 3))
        _, log = fit_gmm(x, EmConfig(n_components=4, seed=1))
        assert (np.diff(log.mean_log_likelihood) >= -1e-10).all()

    def pca_orthonormal():
        x = rng.normal(size=(200, 6)) @ rng.normal(size=(6, 6))
        model = fit_pca(x, d=4)
        assert np.allclose(model.basis @ model.basis.T, np.eye(4), atol=1e-6)
        cov = np.cov(project(model, x).T)
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() <= 1e-6 * np.diag(cov).max()

    def co_identity():
        cm = CoOccurrenceMatrix(matrix=np.eye(3), priors=np.full(3, 0.5))
        s = rng.normal(size=(4, 3))
        assert np.array_equal(apply_co_weighting(s, cm, 0.0), s)

    def svm_separable():
        w, b = train_binary(np.full((8, 1), 2.0), np.full((8, 1), -2.0), SvmConfig(C=100.0))
        assert w[0] * 2 + b > 0 and -w[0] * 2 + b < 0

    return [
        ("tensor container round trip", tensor_round_trip),
        ("symmetric window rule", window_rule),
        ("fisher blocks at the mean", fisher_at_the_mean),
        ("fisher order/duplication invariance", fisher_invariances),
        ("EM monotone likelihood", em_monotone),
        ("PCA orthonormal decorrelation", pca_orthonormal),
        ("co-occurrence identity at alpha 0", co_identity),
        ("separable SVM toy", svm_separable),
    ]


def run_selftest() -> int:
    failures = 0
    for name, check in _selftest_checks():
        try:
            check()
            print(f"ok - {name}")
        except Exception as exc:   # noqa: BLE001 -- report and keep going
            failures += 1
            print(f"FAIL - {name}: {exc}")
    return 0 if failures == 0 else 1


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.seed is not None:
        cfg = replace(
            cfg,
            pca_seed=args.seed,
            em=replace(cfg.em, seed=args.seed),
            svm=replace(cfg.svm, seed=args.seed),
            protocol={**cfg.protocol, "seed": args.seed}
            if cfg.protocol.get("kind") in ("kfold", "fixed")
            else cfg.protocol,
        )
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpfv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_workers in [("pool", False), ("fit", False), ("encode", False),
                                ("train", False), ("evaluate", True)]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", help="output directory (overrides config output_dir)")
        p.add_argument("--force", action="store_true", help="recompute existing outputs")
        p.add_argument("--seed", type=int, help="override all stage seeds")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel fold jobs (evaluate only)")
    sub.add_parser("selftest")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return run_selftest()
    try:
        cfg = _apply_overrides(load_config_file(args.config), args)
    except ConfigError as exc:
        field = f" (field: {exc.field_name})" if exc.field_name else ""
        print(json.dumps({"error": f"{exc}{field}", "stage": "config"}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": str(exc), "stage": "config"}), file=sys.stderr)
        return 2

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "pool":
            code = cmd_pool(cfg, out_dir, args.force)
        elif args.command == "fit":
            code = cmd_fit(cfg, out_dir, args.force)
        elif args.command == "encode":
            code = cmd_encode(cfg, out_dir, args.force)
        elif args.command == "train":
            code = cmd_train(cfg, out_dir, args.force)
        else:
            code = cmd_evaluate(cfg, out_dir, args.force, args.workers)
    except Exception as exc:   # noqa: BLE001 -- map anything to exit 1
        return _fail(args.command, exc)
    if code == 0:
        _write_run_manifest(out_dir, args.command, cfg)
    return code


if __name__ == "__main__":
    sys.exit(main())
