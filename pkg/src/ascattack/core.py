"""Domain types and the algebra of composing sparse adversarial examples.

An adversarial example is a base image plus a replacement texture applied
on the support of a binary pixel-selection mask. Pixel values live in
[0, 1]; the mask is spatial (one bit covers all three channels) and its
popcount is the l0 cost of the perturbation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractViolationError, DegenerateTargetError

__all__ = [
    "ImagePlane",
    "BinaryMask",
    "PerturbationTexture",
    "ObjectTarget",
    "AttackBudget",
    "Detection",
    "AdversarialExample",
    "compose_adversarial",
    "l0_norm",
    "resolve_budget",
]


def _frozen(arr: np.ndarray) -> np.ndarray:
    """Freeze a private copy so neither side can mutate shared state."""
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImagePlane:
    """H x W x 3 pixel grid with values in [0, 1], row-major."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ContractViolationError(f"image must be HxWx3, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ContractViolationError("image contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ContractViolationError("image values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


@dataclass(frozen=True)
class BinaryMask:
    """H x W boolean pixel-selection mask with an exact popcount."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.dtype != np.bool_:
            if not np.isin(b, (0, 1)).all():
                raise ContractViolationError("mask bits must be boolean or 0/1")
            b = b.astype(bool)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ContractViolationError(f"mask must be HxW, got shape {b.shape}")
        object.__setattr__(self, "bits", _frozen(b))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def popcount(self) -> int:
        return int(self.bits.sum())

    @staticmethod
    def empty(height: int, width: int) -> "BinaryMask":
        return BinaryMask(np.zeros((height, width), dtype=bool))

    @staticmethod
    def full(height: int, width: int) -> "BinaryMask":
        return BinaryMask(np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class PerturbationTexture:
    """Replacement pixel values (in [0, 1]) used where the mask selects."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ContractViolationError(f"texture must be HxWx3, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ContractViolationError("texture contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ContractViolationError("texture values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @staticmethod
    def from_image(image: ImagePlane) -> "PerturbationTexture":
        return PerturbationTexture(image.values.copy())


@dataclass(frozen=True)
class ObjectTarget:
    """An annotated object to attack: box, class, optional segmentation."""

    bbox: tuple[float, float, float, float]  # (x, y, w, h) in pixels
    category: int
    segmentation: Optional[BinaryMask] = None
    part_segmentation: Optional[tuple[BinaryMask, ...]] = None

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0 or x < 0 or y < 0:
            raise ContractViolationError(f"invalid bbox {self.bbox}")
        object.__setattr__(self, "bbox", (float(x), float(y), float(w), float(h)))
        if self.segmentation is not None and self.segmentation.popcount() == 0:
            raise DegenerateTargetError("segmentation mask is empty")
        if self.part_segmentation is not None:
            object.__setattr__(self, "part_segmentation", tuple(self.part_segmentation))

    @property
    def bbox_area(self) -> float:
        return self.bbox[2] * self.bbox[3]

    def object_area(self) -> int:
        """Pixel area: segmentation popcount when present, else bbox area."""
        if self.segmentation is not None:
            return self.segmentation.popcount()
        return int(round(self.bbox_area))


@dataclass(frozen=True)
class AttackBudget:
    """l0 budget, absolute or as a fraction of the object area."""

    mode: str  # "absolute" | "fraction"
    value: float

    ABSOLUTE = "absolute"
    FRACTION = "fraction"

    def __post_init__(self):
        if self.mode not in (self.ABSOLUTE, self.FRACTION):
            raise ContractViolationError(f"unknown budget mode {self.mode!r}")
        if self.mode == self.ABSOLUTE:
            if self.value < 0 or self.value != int(self.value):
                raise ContractViolationError("absolute budget must be a nonnegative integer")
        else:
            if not (0.0 < self.value <= 1.0):
                raise ContractViolationError("fractional budget must lie in (0, 1]")

    @staticmethod
    def absolute(n: int) -> "AttackBudget":
        return AttackBudget(AttackBudget.ABSOLUTE, n)

    @staticmethod
    def fraction(f: float) -> "AttackBudget":
        return AttackBudget(AttackBudget.FRACTION, f)


@dataclass(frozen=True)
class Detection:
    """A single detector output: box, confidence, class."""

    bbox: tuple[float, float, float, float]
    score: float
    category: int

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ContractViolationError(f"score {self.score} outside [0, 1]")
        object.__setattr__(self, "bbox", tuple(float(c) for c in self.bbox))


@dataclass(frozen=True)
class AdversarialExample:
    """Result of an attack: base image, mask, texture, and run metadata."""

    base: ImagePlane
    mask: BinaryMask
    texture: PerturbationTexture
    seed: Optional[int] = None
    iterations: int = 0
    value: float = float("-inf")
    success: bool = False

    def composed(self) -> ImagePlane:
        return compose_adversarial(self.base, self.mask, self.texture)

    def l0(self) -> int:
        return self.mask.popcount()


def _check_dims(a, b, what: str):
    if a.shape[:2] != b.shape[:2]:
        raise ContractViolationError(f"{what}: {a.shape[:2]} vs {b.shape[:2]}")


def compose_adversarial(
    base: ImagePlane, mask: BinaryMask, texture: PerturbationTexture
) -> ImagePlane:
    """Apply replacement semantics: texture where the mask selects, base elsewhere.

    Pixels outside the mask support are returned bit-identical to the base.
    """
    _check_dims(base.values, mask.bits, "base/mask dimension mismatch")
    _check_dims(base.values, texture.values, "base/texture dimension mismatch")
    out = np.where(mask.bits[:, :, None], texture.values, base.values)
    return ImagePlane(out)


def l0_norm(mask: BinaryMask) -> int:
    """Exact popcount of the selection mask."""
    return mask.popcount()


def resolve_budget(budget: AttackBudget, target: ObjectTarget) -> int:
    """Resolve a budget to a concrete pixel count N0 for the given target.

    Fractional budgets use the segmentation popcount as the object area,
    falling back to bbox area when no segmentation is attached.
    """
    if budget.mode == AttackBudget.ABSOLUTE:
        return int(budget.value)
    area = target.object_area()
    if area <= 0:
        raise DegenerateTargetError("object area is zero; cannot resolve fractional budget")
    return int(math.floor(budget.value * area))
