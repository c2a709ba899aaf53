"""Input-smoothing defenses with straight-through (BPDA) gradients.

The wrapped oracle filters the image before the base forward pass. For the
gradient, Gaussian smoothing is linear so the exact transpose filter is
used; bilateral filtering is approximated with an identity pass-through.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import ImagePlane
from .base import DefenseSpec, Objective, Oracle, OracleReport


def _gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.array([1.0])
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma**2))
    return k / k.sum()


def _conv1d_zero(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Correlate along one axis with zero padding (self-adjoint for symmetric kernels)."""
    radius = len(kernel) // 2
    moved = np.moveaxis(arr, axis, 0)
    padded = np.zeros((moved.shape[0] + 2 * radius,) + moved.shape[1:])
    padded[radius : radius + moved.shape[0]] = moved
    out = np.zeros_like(moved)
    for i, kv in enumerate(kernel):
        out += kv * padded[i : i + moved.shape[0]]
    return np.moveaxis(out, 0, axis)


def gaussian_filter_image(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with zero padding, applied per channel."""
    if sigma <= 0:
        return values.copy()
    k = _gaussian_kernel(sigma)
    return _conv1d_zero(_conv1d_zero(values, k, axis=0), k, axis=1)


def bilateral_filter_image(values: np.ndarray, sigmas: tuple[float, float, float]) -> np.ndarray:
    """Per-channel bilateral filter with separate x/y spatial and range sigmas."""
    sx, sy, sr = sigmas
    rx = max(1, int(math.ceil(2.0 * sx)))
    ry = max(1, int(math.ceil(2.0 * sy)))
    padded = np.pad(values, ((ry, ry), (rx, rx), (0, 0)), mode="reflect")
    h, w = values.shape[:2]
    acc = np.zeros_like(values)
    norm = np.zeros_like(values)
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            spatial = math.exp(-(dx**2) / (2 * sx**2) - (dy**2) / (2 * sy**2))
            shifted = padded[ry + dy : ry + dy + h, rx + dx : rx + dx + w]
            wgt = spatial * np.exp(-((shifted - values) ** 2) / (2 * sr**2))
            acc += wgt * shifted
            norm += wgt
    return acc / norm


class DefendedOracle(Oracle):
    """Base oracle behind an input-smoothing defense."""

    def __init__(self, base: Oracle, spec: DefenseSpec):
        self.base = base
        self.spec = spec
        self.supports_gradient = base.supports_gradient
        self.supported_objectives = base.supported_objectives

    def _filter(self, image: ImagePlane) -> ImagePlane:
        if self.spec.kind == DefenseSpec.GAUSSIAN:
            out = gaussian_filter_image(image.values, self.spec.sigma)
        else:
            out = bilateral_filter_image(image.values, self.spec.sigmas)
        return ImagePlane(np.clip(out, 0.0, 1.0))

    def report(self, image: ImagePlane, objective: Objective, want_grad: bool = False) -> OracleReport:
        self._check(objective, want_grad)
        filtered = self._filter(image)
        rep = self.base.report(filtered, objective, want_grad=want_grad)
        if want_grad and rep.grad is not None and self.spec.kind == DefenseSpec.GAUSSIAN:
            rep = OracleReport(
                rep.value, rep.detections, gaussian_filter_image(rep.grad, self.spec.sigma)
            )
        return rep


def with_defense(oracle: Oracle, spec: DefenseSpec) -> DefendedOracle:
    """Wrap an oracle so callers attack through the smoothing defense."""
    from ..errors import CapabilityError

    if not oracle.supports_gradient:
        raise CapabilityError("defense wrapper requires a gradient-capable base oracle")
    return DefendedOracle(oracle, spec)
