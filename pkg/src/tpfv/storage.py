"""On-disk formats: tensor container, landmark files, manifests, model files.

Tensor container layout::

    bytes 0..8    magic "TPFV0001"
    bytes 8..12   u32 little-endian header length
    then          UTF-8 JSON header {"dtype", "shape", ...}
    then          raw little-endian IEEE-754 payload, row-major

Headers are serialized canonically (sorted keys, no whitespace) so that a
read/write round trip is byte-identical.  Model files reuse the container
with a ``metadata`` header block describing the packed arrays.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .datamodel import (
    NUM_LANDMARKS,
    DatasetManifest,
    FeatureMapSequence,
    FormatError,
    GmmModel,
    Label,
    LandmarkTrack,
    LinearModel,
    ManifestEntry,
    PcaModel,
)

MAGIC = b"TPFV0001"
_HEADER_LEN_OFFSET = 8
_HEADER_OFFSET = 12

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_tensor(path, array, **header_fields):
    """Write an array to the tensor container; extra keyword fields go into
    the JSON header verbatim."""
    array = np.asarray(array)
    tag = _DTYPE_TAGS.get(array.dtype)
    if tag is None:
        raise ValueError(f"unsupported dtype {array.dtype}; use float32 or float64")
    if not np.isfinite(array).all():
        raise ValueError("refusing to write non-finite payload")
    header = dict(header_fields)
    header["dtype"] = tag
    header["shape"] = [int(s) for s in array.shape]
    blob = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        fh.write(np.ascontiguousarray(array).astype(_DTYPES[tag], copy=False).tobytes())


def read_tensor(path):
    """Read a tensor container; returns (array, header dict).

    Raises FormatError with the byte offset of the first offending content.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise FormatError(f"bad magic in {path}: {raw[:8]!r}", offset=0)
    if len(raw) < _HEADER_OFFSET:
        raise FormatError(f"truncated header length in {path}", offset=_HEADER_LEN_OFFSET)
    header_len = int(np.frombuffer(raw, dtype="<u4", count=1, offset=_HEADER_LEN_OFFSET)[0])
    payload_offset = _HEADER_OFFSET + header_len
    if len(raw) < payload_offset:
        raise FormatError(f"truncated header in {path}", offset=_HEADER_OFFSET)
    try:
        header = json.loads(raw[_HEADER_OFFSET:payload_offset].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid header JSON in {path}: {exc}", offset=_HEADER_OFFSET)
    if not isinstance(header, dict) or "dtype" not in header or "shape" not in header:
        raise FormatError(f"header missing dtype/shape in {path}", offset=_HEADER_OFFSET)
    dtype = _DTYPES.get(header["dtype"])
    if dtype is None:
        raise FormatError(
            f"unsupported dtype {header['dtype']!r} in {path}", offset=_HEADER_OFFSET
        )
    shape = tuple(int(s) for s in header["shape"])
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    expected = count * dtype.itemsize
    actual = len(raw) - payload_offset
    if actual != expected:
        raise FormatError(
            f"payload of {actual} bytes, shape {shape} needs {expected} in {path}",
            offset=payload_offset,
        )
    array = np.frombuffer(raw, dtype=dtype, count=count, offset=payload_offset).reshape(shape)
    finite = np.isfinite(array)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise FormatError(
            f"non-finite value at flat index {bad} in {path}",
            offset=payload_offset + bad * dtype.itemsize,
        )
    return array.copy(), header


def write_feature_maps(path, seq: FeatureMapSequence):
    write_tensor(
        path,
        seq.frames,
        video_id=seq.video_id,
        layer_tag=seq.layer_tag,
        source_height=int(seq.source_height),
        source_width=int(seq.source_width),
    )


def read_feature_maps(path) -> FeatureMapSequence:
    array, header = read_tensor(path)
    for key in ("video_id", "layer_tag", "source_height", "source_width"):
        if key not in header:
            raise FormatError(f"feature map header missing {key!r} in {path}", offset=_HEADER_OFFSET)
    if array.ndim != 4:
        raise FormatError(
            f"feature maps must be 4-D (frames, channels, h, w), got {array.shape} in {path}",
            offset=_HEADER_OFFSET,
        )
    return FeatureMapSequence(
        video_id=header["video_id"],
        frames=array,
        source_height=int(header["source_height"]),
        source_width=int(header["source_width"]),
        layer_tag=header["layer_tag"],
    )


def feature_map_header(path) -> dict:
    """Read only the container header (cheap frame-count checks)."""
    with open(path, "rb") as fh:
        prefix = fh.read(_HEADER_OFFSET)
        if prefix[:8] != MAGIC:
            raise FormatError(f"bad magic in {path}: {prefix[:8]!r}", offset=0)
        header_len = int(np.frombuffer(prefix, dtype="<u4", count=1, offset=_HEADER_LEN_OFFSET)[0])
        blob = fh.read(header_len)
    try:
        return json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid header JSON in {path}: {exc}", offset=_HEADER_OFFSET)


def write_landmarks(path, track: LandmarkTrack):
    doc = {"video_id": track.video_id, "frames": track.points.tolist()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def read_landmarks(path, expected_frames=None) -> LandmarkTrack:
    """Read a landmark JSON file; ``expected_frames`` enforces pairing with
    the video's feature maps."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "video_id" not in doc or "frames" not in doc:
        raise FormatError(f"landmark file {path} missing video_id/frames")
    frames = doc["frames"]
    for t, frame in enumerate(frames):
        if len(frame) != NUM_LANDMARKS:
            raise FormatError(
                f"frame {t} of {path} has {len(frame)} points, expected {NUM_LANDMARKS}"
            )
        for p in frame:
            if len(p) != 2:
                raise FormatError(f"frame {t} of {path} has a non-(x, y) point")
    if expected_frames is not None and len(frames) != expected_frames:
        raise FormatError(
            f"{path} has {len(frames)} frames, paired feature maps have {expected_frames}"
        )
    pts = np.asarray(frames, dtype=np.float64)
    if not np.isfinite(pts).all():
        raise FormatError(f"non-finite landmark coordinate in {path}")
    return LandmarkTrack(video_id=doc["video_id"], points=pts)


def _label_to_json(label: Label):
    return label.class_id if label.class_id is not None else list(label.au_bits)


def _label_from_json(value) -> Label:
    if isinstance(value, list):
        return Label(au_bits=tuple(value))
    return Label(class_id=int(value))


def write_manifest(path, manifest: DatasetManifest):
    """Write JSON-lines: a leading metadata record, then one entry per line."""
    meta = {"num_classes": manifest.num_classes, "task": manifest.task}
    if manifest.au_ids is not None:
        meta["au_ids"] = list(manifest.au_ids)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for e in manifest.entries:
            fh.write(
                json.dumps(
                    {
                        "video_id": e.video_id,
                        "actor_id": e.actor_id,
                        "label": _label_to_json(e.label),
                        "feature_path": e.feature_path,
                        "landmark_path": e.landmark_path,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_manifest(path) -> DatasetManifest:
    """Read a JSON-lines manifest; relative data paths are resolved against
    the manifest's directory."""
    base = Path(path).resolve().parent
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in (line.strip() for line in fh) if ln]
    if not lines:
        raise FormatError(f"empty manifest {path}")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid manifest metadata line in {path}: {exc}")
    if "num_classes" not in meta or "task" not in meta:
        raise FormatError(f"manifest {path} metadata missing num_classes/task")
    entries = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON on line {i} of {path}: {exc}")
        missing = [k for k in ("video_id", "actor_id", "label", "feature_path", "landmark_path") if k not in rec]
        if missing:
            raise FormatError(f"line {i} of {path} missing fields {missing}")
        entries.append(
            ManifestEntry(
                video_id=rec["video_id"],
                actor_id=rec["actor_id"],
                label=_label_from_json(rec["label"]),
                feature_path=_resolve(base, rec["feature_path"]),
                landmark_path=_resolve(base, rec["landmark_path"]),
            )
        )
    return DatasetManifest(
        entries=tuple(entries),
        num_classes=int(meta["num_classes"]),
        task=meta["task"],
        au_ids=tuple(meta["au_ids"]) if "au_ids" in meta else None,
    )


def _resolve(base: Path, p: str) -> str:
    if not p:
        return p
    return p if os.path.isabs(p) else str(base / p)


def validate_manifest_files(manifest: DatasetManifest) -> list:
    """File-level manifest checks: paths exist, landmark frame counts match
    the paired feature maps."""
    violations = []
    for e in manifest.entries:
        if not os.path.isfile(e.feature_path):
            violations.append(f"{e.video_id}: feature file missing: {e.feature_path}")
            continue
        if not os.path.isfile(e.landmark_path):
            violations.append(f"{e.video_id}: landmark file missing: {e.landmark_path}")
            continue
        try:
            header = feature_map_header(e.feature_path)
            frames = int(header["shape"][0])
            read_landmarks(e.landmark_path, expected_frames=frames)
        except (FormatError, KeyError, IndexError) as exc:
            violations.append(f"{e.video_id}: {exc}")
    return violations


# --- model files ------------------------------------------------------------

def _save_model_arrays(path, kind, arrays, metadata):
    """Pack named float64 arrays into one container payload."""
    order = list(arrays.keys())
    flat = [np.ascontiguousarray(np.asarray(arrays[k], dtype=np.float64)).ravel() for k in order]
    packed = np.concatenate(flat) if flat else np.zeros(0)
    layout = {k: [int(s) for s in np.asarray(arrays[k]).shape] for k in order}
    meta = dict(metadata)
    meta["model"] = kind
    write_tensor(path, packed, metadata=meta, arrays=order, layout=layout)


def _load_model_arrays(path, kind):
    packed, header = read_tensor(path)
    meta = header.get("metadata", {})
    if meta.get("model") != kind:
        raise FormatError(f"{path} holds a {meta.get('model')!r} model, expected {kind!r}")
    arrays = {}
    pos = 0
    for name in header["arrays"]:
        shape = tuple(header["layout"][name])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arrays[name] = packed[pos : pos + n].reshape(shape)
        pos += n
    return arrays, meta


def save_pca(path, model: PcaModel):
    arrays = {"mean": model.mean, "basis": model.basis}
    meta = {"input_dim": model.input_dim, "output_dim": model.output_dim,
            "whitened": model.scale is not None}
    if model.scale is not None:
        arrays["scale"] = model.scale
    _save_model_arrays(path, "pca", arrays, meta)


def load_pca(path) -> PcaModel:
    arrays, meta = _load_model_arrays(path, "pca")
    return PcaModel(mean=arrays["mean"], basis=arrays["basis"], scale=arrays.get("scale"))


def save_gmm(path, model: GmmModel):
    _save_model_arrays(
        path,
        "gmm",
        {"weights": model.weights, "means": model.means, "variances": model.variances},
        {"n_components": model.n_components, "dim": model.dim},
    )


def load_gmm(path) -> GmmModel:
    arrays, _ = _load_model_arrays(path, "gmm")
    return GmmModel(weights=arrays["weights"], means=arrays["means"], variances=arrays["variances"])


def save_linear_model(path, model: LinearModel):
    arrays = {"weights": model.weights, "biases": model.biases}
    meta = {
        "C": model.C,
        "task": model.task,
        "class_ids": list(model.class_ids),
    }
    if model.cooccurrence is not None:
        arrays["cooc_matrix"] = model.cooccurrence.matrix
        arrays["cooc_priors"] = model.cooccurrence.priors
    if model.landmark_masks is not None:
        meta["landmark_masks"] = {str(k): list(map(int, v)) for k, v in model.landmark_masks.items()}
    _save_model_arrays(path, "linear", arrays, meta)


def load_linear_model(path) -> LinearModel:
    from .svm import CoOccurrenceMatrix

    arrays, meta = _load_model_arrays(path, "linear")
    cooc = None
    if "cooc_matrix" in arrays:
        cooc = CoOccurrenceMatrix(matrix=arrays["cooc_matrix"], priors=arrays["cooc_priors"])
    masks = None
    if "landmark_masks" in meta:
        masks = {int(k): tuple(v) for k, v in meta["landmark_masks"].items()}
    return LinearModel(
        weights=arrays["weights"],
        biases=arrays["biases"],
        C=float(meta["C"]),
        class_ids=tuple(meta["class_ids"]),
        task=meta["task"],
        cooccurrence=cooc,
        landmark_masks=masks,
    )
