"""Feature-map export in the trajectory-pooling pipeline's tensor format.

Container layout (the component boundary; written here, read by the
consumer):

    bytes 0..8    magic "TPFV0001"
    bytes 8..12   u32 little-endian header length
    then          UTF-8 JSON header {"dtype", "shape", ...}
    then          raw little-endian IEEE-754 payload, row-major
"""

from __future__ import annotations

import json

import numpy as np
import torch

from .arch import Emnet

MAGIC = b"TPFV0001"


def write_tensor(path, array: np.ndarray, **header_fields):
    array = np.ascontiguousarray(array, dtype=np.float32)
    if not np.isfinite(array).all():
        raise ValueError("refusing to export non-finite feature maps")
    header = dict(header_fields)
    header["dtype"] = "f32"
    header["shape"] = [int(s) for s in array.shape]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        fh.write(array.astype("<f4", copy=False).tobytes())


@torch.no_grad()
def export_feature_maps(student: Emnet, frames, out_path, video_id: str,
                        layer_tag: str = "conv5", batch_size: int = 8,
                        crop: int = 224) -> tuple:
    """Run the student over a video's frames and write one tensor file.

    ``frames`` is (T, 3, crop, crop); the written shape is (T, C, Hf, Wf)
    for the tapped layer (conv5: C = 512).  Returns the exported shape.
    """
    frames = torch.as_tensor(np.asarray(frames), dtype=torch.float32)
    if frames.ndim != 4 or frames.shape[1] != 3 or frames.shape[2:] != (crop, crop):
        raise ValueError(f"frames must be (T, 3, {crop}, {crop}), got {tuple(frames.shape)}")
    student.eval()
    chunks = []
    for lo in range(0, frames.shape[0], batch_size):
        chunks.append(student.feature_map(frames[lo : lo + batch_size], layer_tag).numpy())
    maps = np.concatenate(chunks)
    write_tensor(
        out_path,
        maps,
        video_id=video_id,
        layer_tag=layer_tag,
        source_height=crop,
        source_width=crop,
    )
    return tuple(maps.shape)
