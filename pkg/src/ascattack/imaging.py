"""PNG and annotation ingestion/emission.

Images are 8-bit PNGs mapped to [0, 1] by /255; masks are 1-bit or
grayscale PNGs where any nonzero pixel counts as set. Annotations use a
minimal COCO-style JSON subset: bbox, category_id, and segmentation given
either as a mask PNG path or as uncompressed column-major RLE counts.
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .core import BinaryMask, ImagePlane, ObjectTarget
from .errors import ContractViolationError

__all__ = [
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "save_heatmap",
    "image_to_png_bytes",
    "image_from_png_bytes",
    "mask_to_png_bytes",
    "mask_from_png_bytes",
    "png_b64",
    "png_unb64",
    "decode_rle",
    "load_targets",
]


def image_to_png_bytes(image: ImagePlane) -> bytes:
    arr = np.clip(np.round(image.values * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> ImagePlane:
    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImagePlane(arr)


def mask_to_png_bytes(mask: BinaryMask) -> bytes:
    arr = mask.bits.astype(np.uint8) * 255
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").convert("1", dither=Image.Dither.NONE).save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> BinaryMask:
    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("L"))
    return BinaryMask(arr > 0)


def load_image(path: Union[str, Path]) -> ImagePlane:
    return image_from_png_bytes(Path(path).read_bytes())


def save_image(image: ImagePlane, path: Union[str, Path]):
    Path(path).write_bytes(image_to_png_bytes(image))


def load_mask(path: Union[str, Path]) -> BinaryMask:
    return mask_from_png_bytes(Path(path).read_bytes())


def save_mask(mask: BinaryMask, path: Union[str, Path]):
    Path(path).write_bytes(mask_to_png_bytes(mask))


def save_heatmap(values: np.ndarray, path: Union[str, Path]):
    """Write a [0, 1] grid as an 8-bit grayscale PNG."""
    arr = np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path), format="PNG")


def png_b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def png_unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


def decode_rle(size: tuple[int, int], counts: list[int]) -> BinaryMask:
    """Uncompressed COCO RLE: column-major runs, starting with zeros."""
    h, w = size
    total = h * w
    if sum(counts) != total:
        raise ContractViolationError(
            f"RLE counts sum to {sum(counts)}, expected {total} for size {size}"
        )
    flat = np.zeros(total, dtype=bool)
    pos, bit = 0, False
    for run in counts:
        if bit:
            flat[pos : pos + run] = True
        pos += run
        bit = not bit
    return BinaryMask(flat.reshape((w, h)).T)


def _load_segmentation(entry, base_dir: Path, shape: tuple[int, int]) -> Optional[BinaryMask]:
    if entry is None:
        return None
    if isinstance(entry, str):
        mask = load_mask(base_dir / entry)
    elif isinstance(entry, dict) and "counts" in entry:
        mask = decode_rle(tuple(entry["size"]), list(entry["counts"]))
    else:
        raise ContractViolationError(f"unsupported segmentation entry {type(entry).__name__}")
    if mask.shape != shape:
        raise ContractViolationError(f"segmentation shape {mask.shape} != image shape {shape}")
    return mask


def load_targets(path: Union[str, Path], image_shape: tuple[int, int]) -> list[ObjectTarget]:
    """Parse the annotation file into attack targets."""
    path = Path(path)
    data = json.loads(path.read_text())
    annotations = data.get("annotations")
    if not isinstance(annotations, list) or not annotations:
        raise ContractViolationError(f"{path}: no annotations found")
    targets = []
    for ann in annotations:
        seg = _load_segmentation(ann.get("segmentation"), path.parent, image_shape)
        parts = ann.get("parts")
        part_masks = None
        if parts:
            part_masks = tuple(
                _load_segmentation(p, path.parent, image_shape) for p in parts
            )
        targets.append(
            ObjectTarget(
                bbox=tuple(ann["bbox"]),
                category=int(ann.get("category_id", 0)),
                segmentation=seg,
                part_segmentation=part_masks,
            )
        )
    return targets
