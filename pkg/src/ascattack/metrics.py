"""Diagnostics and evaluation metrics: box overlap, detection rates, and
per-area adversarial contribution heatmaps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import BinaryMask, Detection, ImagePlane, ObjectTarget
from .errors import ContractViolationError, DegenerateTargetError
from .oracles.base import MISLABEL, Objective, Oracle
from .patterns import erode

__all__ = [
    "iou",
    "ciou",
    "ciou_distance_metric",
    "still_detected",
    "sdr_rate",
    "RegionPartition",
    "region_partition",
    "NacReport",
    "adversarial_contribution",
    "nac_over_areas",
    "grid_tiles",
    "attack_succeeded",
]


def _validate_box(box, name: str):
    x, y, w, h = box
    if w <= 0 or h <= 0:
        raise ContractViolationError(f"{name} has non-positive extent: {box}")


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    _validate_box(box_a, "box_a")
    _validate_box(box_b, "box_b")
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union


def ciou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Complete IoU: IoU minus center-distance and aspect-ratio penalties."""
    _validate_box(box_a, "box_a")
    _validate_box(box_b, "box_b")
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    overlap = iou(box_a, box_b)
    ex0, ey0 = min(ax, bx), min(ay, by)
    ex1, ey1 = max(ax + aw, bx + bw), max(ay + ah, by + bh)
    diag2 = (ex1 - ex0) ** 2 + (ey1 - ey0) ** 2
    rho2 = ((ax + aw / 2) - (bx + bw / 2)) ** 2 + ((ay + ah / 2) - (by + bh / 2)) ** 2
    v = (4.0 / math.pi**2) * (math.atan(aw / ah) - math.atan(bw / bh)) ** 2
    alpha = v / ((1.0 - overlap) + v) if v > 0 else 0.0
    return overlap - rho2 / diag2 - alpha * v


def ciou_distance_metric(detections: Iterable[Detection], target: ObjectTarget) -> float:
    """Best positive CIoU between any detection and the target; 0 if none.

    Negative CIoU and the no-prediction case both collapse to 0.
    """
    best = 0.0
    for det in detections:
        best = max(best, ciou(det.bbox, target.bbox))
    return best


def still_detected(
    detections: Iterable[Detection],
    target: ObjectTarget,
    iou_thr: float = 0.5,
    score_thr: float = 0.5,
    require_category: bool = False,
) -> bool:
    """Successful-detection test: some detection overlaps the target with
    IoU above ``iou_thr`` and score above ``score_thr`` (and, for the
    mislabeling variant, the correct category)."""
    if not (0.0 <= iou_thr <= 1.0 and 0.0 <= score_thr <= 1.0):
        raise ContractViolationError("thresholds must lie in [0, 1]")
    for det in detections:
        if det.score <= score_thr:
            continue
        if require_category and det.category != target.category:
            continue
        if iou(det.bbox, target.bbox) > iou_thr:
            return True
    return False


def sdr_rate(
    results: Iterable[tuple[Sequence[Detection], ObjectTarget]],
    iou_thr: float = 0.5,
    score_thr: float = 0.5,
    require_category: bool = False,
) -> float:
    """Fraction of targets still detected after attack (lower = stronger attack)."""
    flags = [
        still_detected(dets, tgt, iou_thr, score_thr, require_category)
        for dets, tgt in results
    ]
    if not flags:
        raise ContractViolationError("sdr_rate needs at least one target")
    return float(np.mean(flags))


def attack_succeeded(
    detections: Sequence[Detection],
    objective: Objective,
    iou_thr: float = 0.5,
    score_thr: float = 0.5,
) -> bool:
    """Per-objective success predicate used for early stopping.

    Vanishing/mislabel succeed when the target is no longer (correctly)
    detected; box shift succeeds when no prediction retains positive CIoU.
    """
    if objective.kind == "boxshift":
        return ciou_distance_metric(detections, objective.target) <= 0.0
    return not still_detected(
        detections,
        objective.target,
        iou_thr=iou_thr,
        score_thr=score_thr,
        require_category=objective.kind == MISLABEL,
    )


@dataclass(frozen=True)
class RegionPartition:
    """Disjoint inside/contour/outside masks covering the whole frame."""

    inside: BinaryMask
    contour: BinaryMask
    outside: BinaryMask
    tile_size: int = 8

    def __post_init__(self):
        a, b, c = self.inside.bits, self.contour.bits, self.outside.bits
        if a.shape != b.shape or a.shape != c.shape:
            raise ContractViolationError("partition masks must share one shape")
        if (a & b).any() or (a & c).any() or (b & c).any():
            raise ContractViolationError("partition masks must be pairwise disjoint")
        if not (a | b | c).all():
            raise ContractViolationError("partition masks must cover the frame")

    def as_dict(self) -> dict[str, BinaryMask]:
        return {"inside": self.inside, "contour": self.contour, "outside": self.outside}


def region_partition(target: ObjectTarget, contour_width: int = 1, tile_size: int = 8) -> RegionPartition:
    """Split the frame into object interior, boundary band, and background.

    The contour band is the segmentation minus ``contour_width`` erosions of
    itself; the interior is what survives the erosions.
    """
    if target.segmentation is None or target.segmentation.popcount() == 0:
        raise DegenerateTargetError("region partition requires a nonempty segmentation")
    seg = target.segmentation
    inside = erode(seg, iterations=contour_width)
    contour = BinaryMask(seg.bits & ~inside.bits)
    outside = BinaryMask(~seg.bits)
    return RegionPartition(inside=inside, contour=contour, outside=outside, tile_size=tile_size)


@dataclass(frozen=True)
class NacReport:
    """Raw and normalized adversarial contribution per evaluated area."""

    names: tuple[str, ...]
    ac: tuple[float, ...]
    nac: tuple[float, ...]
    heatmap: Optional[np.ndarray] = None  # per-tile nAC grid when tiled

    def by_name(self) -> dict[str, tuple[float, float]]:
        return {n: (a, s) for n, a, s in zip(self.names, self.ac, self.nac)}


def adversarial_contribution(oracle: Oracle, image: ImagePlane, objective: Objective, area: BinaryMask, tcfg) -> float:
    """Gain in wrong-prediction log-likelihood achievable by perturbing one area.

    Optimizes a texture restricted to the area and returns best minus clean
    value; with a clean-start optimizer this is always >= 0.
    """
    from .texture import optimize_texture

    if area.popcount() == 0:
        raise ContractViolationError("adversarial contribution needs a nonempty area")
    from .oracles.base import evaluate

    clean = evaluate(oracle, image, objective).value
    result = optimize_texture(oracle, image, area, objective, tcfg)
    return result.best_value - clean


def nac_over_areas(
    oracle: Oracle,
    image: ImagePlane,
    objective: Objective,
    areas: dict[str, BinaryMask],
    tcfg,
) -> NacReport:
    """Min-max-normalized adversarial contribution across >= 2 areas.

    Degenerate spread (max == min) normalizes to all zeros.
    """
    if len(areas) < 2:
        raise ContractViolationError("nAC needs at least two areas to normalize over")
    names = tuple(areas.keys())
    ac = tuple(
        adversarial_contribution(oracle, image, objective, areas[n], tcfg) for n in names
    )
    lo, hi = min(ac), max(ac)
    if hi > lo:
        nac = tuple((a - lo) / (hi - lo) for a in ac)
    else:
        nac = tuple(0.0 for _ in ac)
    return NacReport(names=names, ac=ac, nac=nac)


def grid_tiles(
    shape: tuple[int, int],
    tile_size: int = 8,
    window: Optional[tuple[int, int, int, int]] = None,
) -> dict[str, BinaryMask]:
    """Non-overlapping square tiles covering a window (default: whole frame).

    Tile names encode their grid position as ``tile_r{row}_c{col}``.
    """
    h, w = shape
    if window is None:
        window = (0, 0, w, h)
    wx, wy, ww, wh = window
    tiles: dict[str, BinaryMask] = {}
    for ty, y0 in enumerate(range(wy, wy + wh, tile_size)):
        for tx, x0 in enumerate(range(wx, wx + ww, tile_size)):
            bits = np.zeros((h, w), dtype=bool)
            bits[y0 : min(y0 + tile_size, wy + wh), x0 : min(x0 + tile_size, wx + ww)] = True
            if bits.any():
                tiles[f"tile_r{ty}_c{tx}"] = BinaryMask(bits)
    return tiles
