"""Built-in differentiable toy detectors for desk-scale verification.

Two stand-ins for a real detector:

* ``LinearToyOracle`` — objectness is a sigmoid of a seeded linear form over
  the target box. Gradients are closed-form, and the per-pixel optimal
  replacement is known analytically, which makes it the reference model for
  brute-force optimality checks.
* ``EdgeToyOracle`` — objectness is driven by Sobel edge energy, so boundary
  pixels dominate the score by construction. The forward pass is written in
  torch and differentiated with autograd; it also predicts a box from the
  energy distribution, enabling box-shift attacks.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import torch

from ..core import Detection, ImagePlane
from ..errors import ContractViolationError
from .base import (
    BOXSHIFT,
    LOG_FLOOR,
    MISLABEL,
    VANISHING,
    Objective,
    Oracle,
    OracleReport,
    clip_bbox_to_grid,
)

_LUMA = np.array([0.299, 0.587, 0.114])
_SOBEL_X = torch.tensor(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]], dtype=torch.float64
)
_SOBEL_Y = _SOBEL_X.T.clone()

# number of classes in the toy label space
NUM_CLASSES = 4


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


class LinearToyOracle(Oracle):
    """Sigmoid-of-linear-form detector with seeded weights.

    Objectness is s(x) = sigmoid(sum_p w_p x_p + b) over the target box;
    class logits come from NUM_CLASSES seeded linear heads over the same
    box. Box-shift degrades to a no-op because the predicted box is fixed
    at the target box (value constant, gradient zero).
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache: dict[tuple[int, int], dict] = {}

    def _params(self, height: int, width: int) -> dict:
        key = (height, width)
        if key not in self._cache:
            rng = np.random.default_rng((self.seed, height, width))
            scale = 2.0 / math.sqrt(3.0 * height * width)
            self._cache[key] = {
                "w": rng.normal(size=(height, width, 3)) * scale,
                "b": 1.0 + 0.5 * rng.normal(),
                "W": rng.normal(size=(NUM_CLASSES, height, width, 3)) * scale,
                "c": 0.5 * rng.normal(size=NUM_CLASSES),
            }
        return self._cache[key]

    def weights(self, height: int, width: int) -> np.ndarray:
        """Objectness weight field for this image size (read-only view)."""
        return self._params(height, width)["w"]

    def optimal_vanishing_texture(self, image: ImagePlane) -> np.ndarray:
        """Per-pixel texture maximizing the vanishing objective: 0 where w > 0, 1 where w < 0."""
        w = self._params(image.height, image.width)["w"]
        return np.where(w > 0, 0.0, 1.0)

    def report(self, image: ImagePlane, objective: Objective, want_grad: bool = False) -> OracleReport:
        self._check(objective, want_grad)
        p = self._params(image.height, image.width)
        x0, y0, bw, bh = clip_bbox_to_grid(objective.target.bbox, image.height, image.width)
        box = np.zeros((image.height, image.width, 3), dtype=bool)
        box[y0 : y0 + bh, x0 : x0 + bw, :] = True

        xv = image.values
        z = float((p["w"] * xv)[box].sum() + p["b"])
        s = _sigmoid(z)
        logits = (p["W"] * xv[None]).reshape(NUM_CLASSES, -1)[:, box.ravel()].sum(axis=1) + p["c"]
        logits -= logits.max()
        probs = np.exp(logits)
        probs /= probs.sum()

        floor = math.log(LOG_FLOOR)
        grad = None
        if objective.kind == VANISHING:
            # log(1 - sigmoid(z)) = -softplus(z), computed stably
            value = -np.logaddexp(0.0, z)
            clamped = value < floor
            value = max(value, floor)
            if want_grad:
                grad = np.zeros_like(xv)
                if not clamped:
                    # d/dx log(1 - sigmoid(z)) = -sigmoid(z) * w
                    grad[box.reshape(grad.shape)] = (-s * p["w"])[box.reshape(grad.shape)]
        elif objective.kind == MISLABEL:
            true_cls = objective.target.category % NUM_CLASSES
            log_p_true = logits[true_cls] - math.log(np.exp(logits).sum())
            value = -log_p_true
            clamped = value > -floor
            value = min(value, -floor)
            if want_grad:
                grad = np.zeros_like(xv)
                if not clamped:
                    coeff = probs.copy()
                    coeff[true_cls] -= 1.0
                    g = np.tensordot(coeff, p["W"], axes=(0, 0))
                    grad[box.reshape(grad.shape)] = g[box.reshape(grad.shape)]
        elif objective.kind == BOXSHIFT:
            value = -1.0  # fixed predicted box == target box, CIoU 1
            if want_grad:
                grad = np.zeros_like(xv)
        else:
            raise ContractViolationError(f"unsupported objective {objective.kind!r}")

        det = Detection(bbox=objective.target.bbox, score=s, category=int(np.argmax(probs)))
        return OracleReport(value=value, detections=(det,), grad=grad)


def _ciou_torch(pred: torch.Tensor, target: tuple[float, float, float, float]) -> torch.Tensor:
    """Complete IoU between a differentiable (x, y, w, h) box and a fixed box."""
    px, py, pw, ph = pred
    tx, ty, tw, th = (torch.as_tensor(v, dtype=torch.float64) for v in target)
    ix0 = torch.maximum(px, tx)
    iy0 = torch.maximum(py, ty)
    ix1 = torch.minimum(px + pw, tx + tw)
    iy1 = torch.minimum(py + ph, ty + th)
    inter = torch.clamp(ix1 - ix0, min=0.0) * torch.clamp(iy1 - iy0, min=0.0)
    union = pw * ph + tw * th - inter
    iou = inter / union
    cx0 = torch.minimum(px, tx)
    cy0 = torch.minimum(py, ty)
    cx1 = torch.maximum(px + pw, tx + tw)
    cy1 = torch.maximum(py + ph, ty + th)
    diag2 = (cx1 - cx0) ** 2 + (cy1 - cy0) ** 2
    rho2 = ((px + pw / 2) - (tx + tw / 2)) ** 2 + ((py + ph / 2) - (ty + th / 2)) ** 2
    v = (4.0 / math.pi**2) * (torch.atan(pw / ph) - torch.atan(tw / th)) ** 2
    alpha = torch.where(v > 0, v / (1.0 - iou + v), torch.zeros_like(v))
    return iou - rho2 / diag2 - alpha * v


class EdgeToyOracle(Oracle):
    """Sobel-energy detector: the object boundary carries the score.

    Objectness of a box is sigmoid(alpha * mean-energy + beta); class logits
    are seeded linear heads over a 4x4 average-pooled energy grid; the
    predicted box is the energy-weighted centroid with second-moment extents
    inside a search window around the target (differentiable end to end).
    """

    # extent calibration: matches the x-variance of an ideal thin square ring
    _EXTENT = math.sqrt(6.0)
    _ZERO_ENERGY = 1e-9
    # receptive-field margin: boxes are padded by this many pixels before
    # pooling, so both sides of an object boundary contribute to the score
    _POOL_MARGIN = 3

    def __init__(self, seed: int, alpha: Optional[float] = None, beta: Optional[float] = None):
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.alpha = float(alpha) if alpha is not None else 10.0 + rng.uniform()
        self.beta = float(beta) if beta is not None else -(1.05 + 0.15 * rng.uniform())
        self._heads = torch.tensor(rng.normal(size=(NUM_CLASSES, 16)) * 0.8, dtype=torch.float64)
        self._head_bias = torch.tensor(rng.normal(size=NUM_CLASSES) * 0.5, dtype=torch.float64)
        self._luma = torch.tensor(_LUMA, dtype=torch.float64)

    def _energy(self, x: torch.Tensor) -> torch.Tensor:
        gray = (x * self._luma).sum(dim=-1)
        # replicate padding: a constant image has exactly zero edge energy,
        # with no spurious response along the frame border
        g = torch.nn.functional.pad(gray[None, None], (1, 1, 1, 1), mode="replicate")
        gx = torch.nn.functional.conv2d(g, _SOBEL_X[None, None])
        gy = torch.nn.functional.conv2d(g, _SOBEL_Y[None, None])
        return (gx**2 + gy**2)[0, 0]

    def _padded(self, e: torch.Tensor, box: tuple[int, int, int, int]) -> torch.Tensor:
        x0, y0, w, h = box
        m = self._POOL_MARGIN
        hh, ww = e.shape
        return e[max(0, y0 - m) : min(hh, y0 + h + m), max(0, x0 - m) : min(ww, x0 + w + m)]

    def _objectness(self, e: torch.Tensor, box: tuple[int, int, int, int]) -> torch.Tensor:
        m = self._padded(e, box).mean()
        return torch.sigmoid(self.alpha * m + self.beta)

    def _class_log_probs(self, e: torch.Tensor, box: tuple[int, int, int, int]) -> torch.Tensor:
        pooled = torch.nn.functional.adaptive_avg_pool2d(
            self._padded(e, box)[None, None], (4, 4)
        ).reshape(16)
        logits = self._heads @ pooled + self._head_bias
        return torch.log_softmax(logits, dim=0)

    def _window(self, box: tuple[int, int, int, int], height: int, width: int):
        x0, y0, w, h = box
        mx = max(2, round(0.25 * min(w, h)))
        wx0, wy0 = max(0, x0 - mx), max(0, y0 - mx)
        wx1, wy1 = min(width, x0 + w + mx), min(height, y0 + h + mx)
        return wx0, wy0, wx1 - wx0, wy1 - wy0

    def _predicted_box(self, e: torch.Tensor, window: tuple[int, int, int, int]) -> torch.Tensor:
        wx0, wy0, ww, wh = window
        raw = e[wy0 : wy0 + wh, wx0 : wx0 + ww]
        if float(raw.detach().sum()) < self._ZERO_ENERGY:
            # zero-energy fallback: window center, half-window extent
            cx, cy = wx0 + ww / 2.0, wy0 + wh / 2.0
            bw, bh = max(ww / 2.0, 1.0), max(wh / 2.0, 1.0)
            return torch.tensor([cx - bw / 2, cy - bh / 2, bw, bh], dtype=torch.float64)
        # amplitude weights (sqrt of energy) localize better than raw energy
        # when boundary contrast varies around the object
        ew = torch.sqrt(raw + 1e-12)
        total = ew.sum()
        ys = torch.arange(wy0, wy0 + wh, dtype=torch.float64)[:, None]
        xs = torch.arange(wx0, wx0 + ww, dtype=torch.float64)[None, :]
        cx = (xs * ew).sum() / total
        cy = (ys * ew).sum() / total
        var_x = (((xs - cx) ** 2) * ew).sum() / total
        var_y = (((ys - cy) ** 2) * ew).sum() / total
        bw = self._EXTENT * torch.sqrt(var_x + 1e-9)
        bh = self._EXTENT * torch.sqrt(var_y + 1e-9)
        return torch.stack([cx - bw / 2, cy - bh / 2, bw, bh])

    def report(self, image: ImagePlane, objective: Objective, want_grad: bool = False) -> OracleReport:
        self._check(objective, want_grad)
        h, w = image.height, image.width
        box = clip_bbox_to_grid(objective.target.bbox, h, w)
        x = torch.tensor(image.values, dtype=torch.float64, requires_grad=want_grad)
        e = self._energy(x)

        floor = math.log(LOG_FLOOR)
        if objective.kind == VANISHING:
            # log(1 - sigmoid(logit)) = -softplus(logit), stable near saturation
            logit = self.alpha * self._padded(e, box).mean() + self.beta
            value = torch.clamp(-torch.nn.functional.softplus(logit), min=floor)
        elif objective.kind == MISLABEL:
            log_probs = self._class_log_probs(e, box)
            value = torch.clamp(-log_probs[objective.target.category % NUM_CLASSES], max=-floor)
        elif objective.kind == BOXSHIFT:
            window = self._window(box, h, w)
            pred = self._predicted_box(e, window)
            value = -_ciou_torch(pred, objective.target.bbox)
        else:
            raise ContractViolationError(f"unsupported objective {objective.kind!r}")

        grad = None
        if want_grad:
            value.backward()
            grad = x.grad.detach().numpy().copy()
        value_f = float(value.detach())

        with torch.no_grad():
            ed = e.detach()
            window = self._window(box, h, w)
            pred = self._predicted_box(ed, window)
            pred_np = pred.numpy()
            pbox = clip_bbox_to_grid(tuple(pred_np), h, w)
            score = float(self._objectness(ed, pbox))
            cls = int(torch.argmax(self._class_log_probs(ed, pbox)))
        det = Detection(bbox=tuple(float(v) for v in pred_np), score=score, category=cls)
        return OracleReport(value=value_f, detections=(det,), grad=grad)


def toy_linear_detector(seed: int) -> LinearToyOracle:
    """Deterministic linear toy oracle for the given seed."""
    return LinearToyOracle(seed)


def toy_edge_detector(seed: int, **kwargs) -> EdgeToyOracle:
    """Deterministic Sobel-energy toy oracle for the given seed."""
    return EdgeToyOracle(seed, **kwargs)
