"""Fixed prior mask generators: patches, grids, strips, and the semantic contour.

Every generator is deterministic and never exceeds its pixel budget; when a
pattern's natural geometry overshoots, pixels are trimmed in raster order
(row-major, first kept).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np

from .core import BinaryMask, ObjectTarget
from .errors import ContractViolationError, DegenerateTargetError, MissingPriorError

__all__ = [
    "PatternSpec",
    "PATTERN_KINDS",
    "erode",
    "dilate",
    "contour_from_segmentation",
    "generate_pattern",
]

PATTERN_KINDS = ("advpatch", "fourpatch", "smallgrid", "twobytwogrid", "strip", "contour")


@dataclass(frozen=True)
class PatternSpec:
    """Which fixed pattern to draw and the pixel budget it must respect."""

    kind: str
    budget: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ContractViolationError(f"unknown pattern kind {self.kind!r}")
        if self.budget < 0:
            raise ContractViolationError("pattern budget must be >= 0")


def erode(mask: BinaryMask, iterations: int = 1) -> BinaryMask:
    """Binary erosion with the 3x3 cross (4-connectivity), zero border.

    A bit survives iff it and its four edge-neighbors are all set;
    out-of-bounds neighbors count as unset.
    """
    b = mask.bits
    for _ in range(iterations):
        out = b.copy()
        out[1:, :] &= b[:-1, :]
        out[:-1, :] &= b[1:, :]
        out[:, 1:] &= b[:, :-1]
        out[:, :-1] &= b[:, 1:]
        out[0, :] = False
        out[-1, :] = False
        out[:, 0] = False
        out[:, -1] = False
        b = out
    return BinaryMask(b)


def dilate(mask: BinaryMask, radius: int = 1) -> BinaryMask:
    """Binary dilation by a Chebyshev ball of the given radius (8-connectivity)."""
    b = mask.bits.copy()
    for _ in range(radius):
        out = b.copy()
        out[1:, :] |= b[:-1, :]
        out[:-1, :] |= b[1:, :]
        out[:, 1:] |= b[:, :-1]
        out[:, :-1] |= b[:, 1:]
        out[1:, 1:] |= b[:-1, :-1]
        out[1:, :-1] |= b[:-1, 1:]
        out[:-1, 1:] |= b[1:, :-1]
        out[:-1, :-1] |= b[1:, 1:]
        b = out
    return BinaryMask(b)


def _trim_raster(bits: np.ndarray, n0: int) -> np.ndarray:
    """Keep at most n0 set bits, first-come in row-major order."""
    count = int(bits.sum())
    if count <= n0:
        return bits
    flat = bits.ravel()
    keep_idx = np.flatnonzero(flat)[:n0]
    out = np.zeros_like(flat)
    out[keep_idx] = True
    return out.reshape(bits.shape)


def contour_from_segmentation(seg: BinaryMask, n0: int) -> BinaryMask:
    """Boundary ring of a segmentation mask, grown inward to fill the budget.

    The outermost ring is seg XOR erode(seg). If it overshoots n0 it is
    trimmed in raster order; if it undershoots, successive inner rings are
    added (eroding repeatedly) until the budget is met, trimming the last
    ring. The result is always a subset of the segmentation.
    """
    if seg.popcount() == 0:
        raise DegenerateTargetError("cannot take the contour of an empty segmentation")
    if n0 <= 0:
        return BinaryMask.empty(*seg.shape)
    acc = np.zeros(seg.shape, dtype=bool)
    remaining = n0
    current = seg
    while remaining > 0 and current.popcount() > 0:
        inner = erode(current)
        ring = current.bits & ~inner.bits
        ring_count = int(ring.sum())
        if ring_count > remaining:
            ring = _trim_raster(ring, remaining)
            ring_count = remaining
        acc |= ring
        remaining -= ring_count
        current = inner
    return BinaryMask(acc)


def _clip_box(x0: int, y0: int, side_w: int, side_h: int, width: int, height: int):
    x0c, y0c = max(0, x0), max(0, y0)
    x1c, y1c = min(width, x0 + side_w), min(height, y0 + side_h)
    return x0c, y0c, x1c, y1c


def _square(bits: np.ndarray, cx: float, cy: float, side: int):
    if side <= 0:
        return
    h, w = bits.shape
    x0 = int(round(cx)) - side // 2
    y0 = int(round(cy)) - side // 2
    x0, y0, x1, y1 = _clip_box(x0, y0, side, side, w, h)
    bits[y0:y1, x0:x1] = True


def _advpatch(bits: np.ndarray, target: ObjectTarget, n0: int):
    x, y, w, h = target.bbox
    side = int(math.isqrt(n0))
    _square(bits, x + w / 2, y + h / 2, side)


def _fourpatch(bits: np.ndarray, target: ObjectTarget, n0: int):
    x, y, w, h = target.bbox
    side = int(math.isqrt(n0 // 4))
    for fx in (0.25, 0.75):
        for fy in (0.25, 0.75):
            _square(bits, x + fx * w, y + fy * h, side)


def _grid_count(w: int, h: int, pitch: int) -> int:
    nv = (w - 1) // pitch + 1
    nh = (h - 1) // pitch + 1
    return nv * h + nh * w - nv * nh


def _smallgrid(bits: np.ndarray, target: ObjectTarget, n0: int):
    x, y, w, h = (int(round(v)) for v in target.bbox)
    ih, iw = bits.shape
    # smallest pitch (densest lattice) whose pixel count still fits the budget
    pitch = None
    for p in range(2, max(w, h) + 1):
        if _grid_count(w, h, p) <= n0:
            pitch = p
            break
    if pitch is None:
        pitch = max(w, h)  # sparsest case: one line each way, trimmed below
    for gx in range(x, x + w, pitch):
        if 0 <= gx < iw:
            bits[max(0, y) : min(ih, y + h), gx] = True
    for gy in range(y, y + h, pitch):
        if 0 <= gy < ih:
            bits[gy, max(0, x) : min(iw, x + w)] = True


def _twobytwogrid(bits: np.ndarray, target: ObjectTarget, n0: int):
    x, y, w, h = (int(round(v)) for v in target.bbox)
    ih, iw = bits.shape
    # thickest central cross with t*(w+h) - t^2 <= n0
    t = 0
    while (t + 1) * (w + h) - (t + 1) ** 2 <= n0 and t + 1 <= min(w, h):
        t += 1
    t = max(t, 1)
    cx, cy = x + w // 2, y + h // 2
    vx0 = cx - t // 2
    hy0 = cy - t // 2
    bits[max(0, y) : min(ih, y + h), max(0, vx0) : min(iw, vx0 + t)] = True
    bits[max(0, hy0) : min(ih, hy0 + t), max(0, x) : min(iw, x + w)] = True


def _strip(bits: np.ndarray, target: ObjectTarget, n0: int):
    parts = target.part_segmentation
    if not parts:
        if target.segmentation is None:
            raise MissingPriorError("strip pattern requires a (part-)segmentation")
        parts = (target.segmentation,)
    per_part = n0 // len(parts)
    for part in parts:
        pb = part.bits
        rows, cols = np.nonzero(pb)
        if rows.size == 0:
            continue
        crow = int(round(rows.mean()))
        # grow a horizontal band outward from the centroid row, within the part
        order = sorted(range(pb.shape[0]), key=lambda r: (abs(r - crow), r))
        used = 0
        for r in order:
            row_count = int(pb[r].sum())
            if row_count == 0:
                continue
            if used + row_count > per_part:
                break
            bits[r] |= pb[r]
            used += row_count


def generate_pattern(spec: PatternSpec, target: ObjectTarget, shape: tuple[int, int]) -> BinaryMask:
    """Draw the requested prior pattern for a target on an HxW canvas.

    The returned mask always satisfies popcount <= spec.budget, enforced by
    raster-order trimming after the geometric construction.
    """
    h, w = shape
    n0 = spec.budget
    if n0 == 0:
        return BinaryMask.empty(h, w)
    if spec.kind == "contour":
        if target.segmentation is None:
            raise MissingPriorError("contour pattern requires a segmentation")
        if target.segmentation.shape != (h, w):
            raise ContractViolationError("segmentation shape does not match canvas")
        return contour_from_segmentation(target.segmentation, n0)
    bits = np.zeros((h, w), dtype=bool)
    if spec.kind == "advpatch":
        _advpatch(bits, target, n0)
    elif spec.kind == "fourpatch":
        _fourpatch(bits, target, n0)
    elif spec.kind == "smallgrid":
        _smallgrid(bits, target, n0)
    elif spec.kind == "twobytwogrid":
        _twobytwogrid(bits, target, n0)
    elif spec.kind == "strip":
        _strip(bits, target, n0)
    return BinaryMask(_trim_raster(bits, n0))
