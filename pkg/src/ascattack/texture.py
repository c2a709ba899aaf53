"""Texture optimization on a fixed pixel-selection mask.

Clipped gradient ascent on the replacement texture: each step adds the
masked objective gradient scaled by the step size and re-clips to [0, 1].
The best iterate by objective value is returned, not the last one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import BinaryMask, ImagePlane, PerturbationTexture, compose_adversarial
from .errors import ContractViolationError, NumericFailureError
from .metrics import attack_succeeded
from .oracles.base import Objective, Oracle, report

__all__ = ["TextureOptConfig", "TextureOptResult", "optimize_texture"]


@dataclass(frozen=True)
class TextureOptConfig:
    """Step size, iteration budget, and stopping behavior for texture ascent."""

    step_size: float = 0.05
    max_steps: int = 200
    early_stop: bool = True
    record_trace: bool = True
    iou_thr: float = 0.5
    score_thr: float = 0.5

    def __post_init__(self):
        if self.step_size <= 0:
            raise ContractViolationError("step size must be > 0")
        if self.max_steps < 0:
            raise ContractViolationError("max_steps must be >= 0")


@dataclass(frozen=True)
class TextureOptResult:
    texture: PerturbationTexture
    best_value: float  # max objective value seen (monotone in step budget)
    texture_value: float  # objective value of the returned texture
    trace: tuple[float, ...]
    steps_run: int
    success: bool

    def trace_csv(self) -> str:
        lines = ["step,value"]
        lines += [f"{i},{v!r}" for i, v in enumerate(self.trace)]
        return "\n".join(lines) + "\n"


def optimize_texture(
    oracle: Oracle,
    base: ImagePlane,
    mask: BinaryMask,
    objective: Objective,
    cfg: TextureOptConfig,
    init: Optional[PerturbationTexture] = None,
) -> TextureOptResult:
    """Maximize the objective over textures supported on the mask.

    The initial texture defaults to the base image (zero effective
    perturbation), so step 0 records the clean objective value. Pixels
    outside the mask support are returned bit-identical to the init.
    Returned iterate: the first one satisfying the success predicate if
    any did, otherwise the best-so-far by objective value.
    """
    if init is None:
        init = PerturbationTexture.from_image(base)
    if init.shape != base.shape or mask.shape != base.shape:
        raise ContractViolationError("mask/texture/base dimensions must match")

    support = mask.bits[:, :, None]
    active = mask.popcount() > 0 and cfg.max_steps > 0
    texture = init.values.copy()

    rep = report(
        oracle,
        compose_adversarial(base, mask, PerturbationTexture(texture)),
        objective,
        want_grad=active,
    )
    best_value, best_texture = rep.value, texture
    trace = [rep.value]
    success = attack_succeeded(rep.detections, objective, cfg.iou_thr, cfg.score_thr)
    chosen = (texture, rep.value) if success else None
    steps = 0

    while active and steps < cfg.max_steps and not (cfg.early_stop and success):
        grad = rep.grad
        if grad is None or not np.isfinite(grad).all():
            raise NumericFailureError("non-finite gradient during texture ascent", step=steps)
        texture = np.clip(texture + cfg.step_size * np.where(support, grad, 0.0), 0.0, 1.0)
        steps += 1
        rep = report(
            oracle,
            compose_adversarial(base, mask, PerturbationTexture(texture)),
            objective,
            want_grad=steps < cfg.max_steps,
        )
        trace.append(rep.value)
        if rep.value > best_value:
            best_value, best_texture = rep.value, texture
        if not success and attack_succeeded(rep.detections, objective, cfg.iou_thr, cfg.score_thr):
            success = True
            chosen = (texture, rep.value)

    out_texture, out_value = chosen if chosen is not None else (best_texture, best_value)
    final = np.where(support, out_texture, init.values)
    return TextureOptResult(
        texture=PerturbationTexture(final),
        best_value=best_value,
        texture_value=out_value,
        trace=tuple(trace) if cfg.record_trace else tuple(trace[:1] + trace[-1:] if steps else trace),
        steps_run=steps,
        success=success,
    )
