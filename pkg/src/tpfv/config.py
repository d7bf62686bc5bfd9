"""Run configuration: one JSON document drives every pipeline stage.

Defaults follow the reference operating point: 64x64 pooling regions, 32
projected dimensions, 16 mixture components, C=100, 16-frame windows.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .gmm import EmConfig
from .pooling import PoolingSpec
from .svm import SvmConfig
from .trajectory import WindowSpec


class ConfigError(Exception):
    """Bad or missing configuration; ``field`` names the offending key."""

    def __init__(self, message, field_name=None):
        super().__init__(message)
        self.field_name = field_name


@dataclass
class RunConfig:
    manifest: str
    output_dir: str = "out"
    pooling: PoolingSpec = field(default_factory=PoolingSpec)
    windows_enabled: Optional[bool] = None   # None: windows for multilabel tasks only
    window_spec: WindowSpec = field(default_factory=WindowSpec)
    pca_dim: int = 32
    pca_whiten: bool = False
    pca_seed: int = 0
    em: EmConfig = field(default_factory=EmConfig)
    per_class_gmm: bool = False
    include_weight_block: bool = False
    svm: SvmConfig = field(default_factory=SvmConfig)
    use_sf: bool = False
    use_co: bool = False
    co_alpha: float = 0.5
    au_region_table: Optional[str] = None
    protocol: dict = field(default_factory=lambda: {"kind": "loao"})
    majority_rule: bool = False

    def windows_for_task(self, task: str) -> bool:
        if self.windows_enabled is None:
            return task == "multilabel"
        return self.windows_enabled

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest,
            "pooling": {
                "region_height": self.pooling.region_height,
                "region_width": self.pooling.region_width,
                "spatial_reduce": self.pooling.spatial_reduce,
                "temporal_reduce": self.pooling.temporal_reduce,
            },
            "windows": {
                "enabled": self.windows_enabled,
                "length": self.window_spec.window_length,
                "stride": self.window_spec.stride,
            },
            "pca": {"dim": self.pca_dim, "whiten": self.pca_whiten, "seed": self.pca_seed},
            "gmm": {
                "components": self.em.n_components,
                "max_iters": self.em.max_iters,
                "rel_tol": self.em.rel_tol,
                "variance_floor": self.em.variance_floor,
                "seed": self.em.seed,
                "per_class": self.per_class_gmm,
            },
            "fv": {"include_weight_block": self.include_weight_block},
            "svm": {
                "C": self.svm.C,
                "max_epochs": self.svm.max_epochs,
                "tol": self.svm.tol,
                "seed": self.svm.seed,
                "bias_scale": self.svm.bias_scale,
            },
            "multilabel": {
                "use_sf": self.use_sf,
                "use_co": self.use_co,
                "co_alpha": self.co_alpha,
                "au_region_table": self.au_region_table,
            },
            "protocol": self.protocol,
            "majority_rule": self.majority_rule,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _section(doc, key):
    value = doc.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section {key!r} must be an object", field_name=key)
    return value


def load_config(doc, base_dir=".") -> RunConfig:
    """Build a RunConfig from a parsed JSON document, validating fields and
    resolving paths against ``base_dir``."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    if "manifest" not in doc or not doc["manifest"]:
        raise ConfigError("config is missing the required field 'manifest'",
                          field_name="manifest")
    manifest = doc["manifest"]
    if not os.path.isabs(manifest):
        manifest = os.path.join(base_dir, manifest)
    if not os.path.isfile(manifest):
        raise ConfigError(f"manifest path does not exist: {manifest}", field_name="manifest")

    pooling_doc = _section(doc, "pooling")
    windows_doc = _section(doc, "windows")
    pca_doc = _section(doc, "pca")
    gmm_doc = _section(doc, "gmm")
    fv_doc = _section(doc, "fv")
    svm_doc = _section(doc, "svm")
    ml_doc = _section(doc, "multilabel")
    protocol = doc.get("protocol", {"kind": "loao"})
    if not isinstance(protocol, dict) or protocol.get("kind") not in ("loao", "kfold", "fixed"):
        raise ConfigError(
            f"protocol.kind must be loao/kfold/fixed, got {protocol!r}", field_name="protocol"
        )

    try:
        pooling = PoolingSpec(
            region_height=int(pooling_doc.get("region_height", 64)),
            region_width=int(pooling_doc.get("region_width", 64)),
            spatial_reduce=pooling_doc.get("spatial_reduce", "mean"),
            temporal_reduce=pooling_doc.get("temporal_reduce", "mean"),
        )
        window_spec = WindowSpec(
            window_length=int(windows_doc.get("length", 16)),
            stride=int(windows_doc.get("stride", 1)),
        )
        em = EmConfig(
            n_components=int(gmm_doc.get("components", 16)),
            max_iters=int(gmm_doc.get("max_iters", 100)),
            rel_tol=float(gmm_doc.get("rel_tol", 1e-5)),
            variance_floor=float(gmm_doc.get("variance_floor", 1e-6)),
            seed=int(gmm_doc.get("seed", 0)),
        )
        svm = SvmConfig(
            C=float(svm_doc.get("C", 100.0)),
            max_epochs=int(svm_doc.get("max_epochs", 1000)),
            tol=float(svm_doc.get("tol", 1e-6)),
            seed=int(svm_doc.get("seed", 0)),
            bias_scale=float(svm_doc.get("bias_scale", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))

    pca_dim = int(pca_doc.get("dim", 32))
    if pca_dim < 1:
        raise ConfigError(f"pca.dim must be positive, got {pca_dim}", field_name="pca.dim")
    co_alpha = float(ml_doc.get("co_alpha", 0.5))
    if co_alpha < 0:
        raise ConfigError("multilabel.co_alpha must be non-negative",
                          field_name="multilabel.co_alpha")
    table = ml_doc.get("au_region_table")
    if table is not None:
        if not os.path.isabs(table):
            table = os.path.join(base_dir, table)
        if not os.path.isfile(table):
            raise ConfigError(f"au_region_table path does not exist: {table}",
                              field_name="multilabel.au_region_table")

    enabled = windows_doc.get("enabled")
    if enabled is not None:
        enabled = bool(enabled)

    return RunConfig(
        manifest=manifest,
        output_dir=doc.get("output_dir", "out"),
        pooling=pooling,
        windows_enabled=enabled,
        window_spec=window_spec,
        pca_dim=pca_dim,
        pca_whiten=bool(pca_doc.get("whiten", False)),
        pca_seed=int(pca_doc.get("seed", 0)),
        em=em,
        per_class_gmm=bool(gmm_doc.get("per_class", False)),
        include_weight_block=bool(fv_doc.get("include_weight_block", False)),
        svm=svm,
        use_sf=bool(ml_doc.get("use_sf", False)),
        use_co=bool(ml_doc.get("use_co", False)),
        co_alpha=co_alpha,
        au_region_table=table,
        protocol=protocol,
        majority_rule=bool(doc.get("majority_rule", False)),
    )


def load_config_file(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    return load_config(doc, base_dir=os.path.dirname(os.path.abspath(path)))
