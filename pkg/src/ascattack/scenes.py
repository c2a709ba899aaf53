"""Seeded synthetic scenes: one solid object on a near-uniform background.

These drive every desk-scale experiment. Contrast and object extent are
kept in ranges where the edge toy detector confidently detects the clean
object but a budgeted boundary attack can flip it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BinaryMask, ImagePlane, ObjectTarget
from .imaging import save_image, save_mask

__all__ = ["Scene", "make_scene", "make_batch", "scene_to_files"]

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Scene:
    image: ImagePlane
    target: ObjectTarget
    seed: int
    kind: str


def _blob_mask(rng: np.random.Generator, size: int, extent: float) -> np.ndarray:
    cy = size / 2 + rng.uniform(-0.05, 0.05) * size
    cx = size / 2 + rng.uniform(-0.05, 0.05) * size
    base_r = extent / 2
    a1, a2 = rng.uniform(0.04, 0.12), rng.uniform(0.03, 0.08)
    p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
    ys, xs = np.mgrid[0:size, 0:size]
    dy, dx = ys - cy, xs - cx
    ang = np.arctan2(dy, dx)
    radius = base_r * (1.0 + a1 * np.sin(2 * ang + p1) + a2 * np.sin(3 * ang + p2))
    radius = np.clip(radius, 0.6 * base_r, 0.98 * size / 2)
    return dy**2 + dx**2 <= radius**2


def _square_mask(rng: np.random.Generator, size: int, extent: float) -> np.ndarray:
    w = int(extent)
    h = int(extent * rng.uniform(0.85, 1.15))
    h = min(h, size - 8)
    x0 = int(rng.uniform(4, size - w - 4))
    y0 = int(rng.uniform(4, size - h - 4))
    bits = np.zeros((size, size), dtype=bool)
    bits[y0 : y0 + h, x0 : x0 + w] = True
    return bits


def make_scene(
    seed: int,
    size: int = 192,
    kind: str | None = None,
    contrast: tuple[float, float] | None = None,
    contrast_ratio: float = 0.5,
    extent_frac: tuple[float, float] = (0.72, 0.84),
    noise: float = 0.002,
) -> Scene:
    """One seeded scene: ramp-filled object over a lightly noisy background.

    The object luma ramps smoothly along a random axis, so boundary
    contrast varies from ``contrast`` down to ``contrast_ratio`` times it
    around the perimeter: part of the outline is much more salient than
    the rest, which is what selection-aware attacks exploit. Default
    contrast ranges are per shape: diagonal blob boundaries carry roughly
    half the Sobel energy per pixel of axis-aligned square edges, so blobs
    get proportionally stronger contrast to land in the same detector
    response band.
    """
    rng = np.random.default_rng(seed)
    if kind is None:
        kind = "square" if rng.uniform() < 0.5 else "blob"
    extent = rng.uniform(*extent_frac) * size
    bits = _square_mask(rng, size, extent) if kind == "square" else _blob_mask(rng, size, extent)

    if contrast is None:
        contrast = (0.56, 0.68) if kind == "square" else (0.74, 0.86)
    c_strong = rng.uniform(*contrast)
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    lo, hi = (0.03, 0.95 - c_strong) if sign > 0 else (0.05 + c_strong, 0.97)
    bg_luma = rng.uniform(lo, hi)

    rows, cols = np.nonzero(bits)
    axis = rng.integers(0, 4)  # ramp direction: +x, -x, +y, -y
    coord = cols if axis < 2 else rows
    lo_c, hi_c = coord.min(), coord.max()
    ys, xs = np.mgrid[0:size, 0:size]
    t = ((xs if axis < 2 else ys) - lo_c) / max(hi_c - lo_c, 1)
    t = np.clip(t if axis % 2 == 0 else 1.0 - t, 0.0, 1.0)
    delta = c_strong * (contrast_ratio + (1.0 - contrast_ratio) * t)

    tint = rng.uniform(-0.04, 0.04, size=3)
    bg = np.clip(bg_luma + tint, 0.02, 0.98)
    img = np.tile(bg, (size, size, 1))
    obj_luma = np.clip(bg_luma + sign * delta, 0.01, 0.99)
    img[bits] = obj_luma[bits, None]
    img += rng.normal(scale=noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0)

    x0, x1 = int(cols.min()), int(cols.max())
    y0, y1 = int(rows.min()), int(rows.max())
    seg = BinaryMask(bits)
    mid = (y0 + y1) // 2
    top = bits.copy()
    top[mid + 1 :, :] = False
    bottom = bits.copy()
    bottom[: mid + 1, :] = False
    parts = tuple(BinaryMask(p) for p in (top, bottom) if p.any())

    target = ObjectTarget(
        bbox=(float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1)),
        category=int(rng.integers(0, 4)),
        segmentation=seg,
        part_segmentation=parts,
    )
    return Scene(image=ImagePlane(img), target=target, seed=seed, kind=kind)


def make_batch(count: int, seed: int = 0, size: int = 112, **kwargs) -> list[Scene]:
    """Deterministic batch of scenes derived from one master seed."""
    return [make_scene(seed * 100_000 + i, size=size, **kwargs) for i in range(count)]


def scene_to_files(scene: Scene, out_dir: Path, stem: str = "scene") -> dict:
    """Write image, segmentation, part masks, and the annotation JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_path = out_dir / f"{stem}.png"
    seg_path = out_dir / f"{stem}_seg.png"
    save_image(scene.image, image_path)
    save_mask(scene.target.segmentation, seg_path)
    part_names = []
    for i, part in enumerate(scene.target.part_segmentation or ()):
        name = f"{stem}_part{i}.png"
        save_mask(part, out_dir / name)
        part_names.append(name)
    ann = {
        "images": [{"file_name": image_path.name, "height": scene.image.height, "width": scene.image.width}],
        "annotations": [
            {
                "bbox": list(scene.target.bbox),
                "category_id": scene.target.category,
                "segmentation": seg_path.name,
                "parts": part_names,
            }
        ],
    }
    ann_path = out_dir / f"{stem}_annotations.json"
    ann_path.write_text(json.dumps(ann, indent=2, sort_keys=True))
    return {"image": image_path, "annotations": ann_path, "segmentation": seg_path}
