"""Scattered-pixel sparse attacks and an exhaustive subset oracle.

The projected-gradient attack keeps a dense texture and re-projects its
support to the budget after every ascent step; the pruning attack starts
from full support and repeatedly drops the least useful pixels. The brute
force enumerates every subset of the budgeted size and is the ground-truth
optimum on tiny instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    AdversarialExample,
    BinaryMask,
    ImagePlane,
    PerturbationTexture,
    compose_adversarial,
)
from .errors import CombinatorialBlowupError, ContractViolationError, NumericFailureError
from .metrics import attack_succeeded
from .oracles.base import VANISHING, Objective, Oracle, evaluate, report
from .oracles.toys import LinearToyOracle
from .texture import TextureOptConfig, optimize_texture

__all__ = ["BruteForceLimit", "pgd0_attack", "cw_l0_attack", "brute_force_attack"]


@dataclass(frozen=True)
class BruteForceLimit:
    """Tractability guard for exhaustive enumeration."""

    max_subsets: int = 1_000_000

    def __post_init__(self):
        if self.max_subsets < 1:
            raise ContractViolationError("max_subsets must be >= 1")


def _top_n_support(deviation: np.ndarray, n0: int) -> np.ndarray:
    """Boolean support of the n0 spatially largest deviations (ties raster)."""
    flat = deviation.ravel()
    if n0 >= flat.size:
        return np.ones_like(flat, dtype=bool).reshape(deviation.shape)
    order = np.argsort(-flat, kind="stable")[:n0]
    out = np.zeros(flat.size, dtype=bool)
    out[order] = True
    return out.reshape(deviation.shape)


def _project_l0(texture: np.ndarray, base: np.ndarray, n0: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep the n0 spatial pixels deviating most from the base, reset the rest."""
    deviation = np.abs(texture - base).sum(axis=2)
    support = _top_n_support(deviation, n0) & (deviation > 0)
    return np.where(support[:, :, None], texture, base), support


def _pgd0_single(oracle, image, objective, n0, steps, step_size, early_stop,
                 iou_thr, score_thr, init):
    base = image.values
    texture, support = _project_l0(init, base, n0)
    rep = report(oracle, ImagePlane(texture), objective, want_grad=steps > 0)
    best = (rep.value, texture.copy(), support.copy())
    success = attack_succeeded(rep.detections, objective, iou_thr, score_thr)
    chosen = best if success else None
    iterations = 0

    for step in range(steps):
        if early_stop and success:
            break
        grad = rep.grad
        if grad is None or not np.isfinite(grad).all():
            raise NumericFailureError("non-finite gradient in pgd0", step=step)
        texture = np.clip(texture + step_size * grad, 0.0, 1.0)
        texture, support = _project_l0(texture, base, n0)
        iterations = step + 1
        rep = report(oracle, ImagePlane(texture), objective, want_grad=step + 1 < steps)
        if rep.value > best[0]:
            best = (rep.value, texture.copy(), support.copy())
        if not success and attack_succeeded(rep.detections, objective, iou_thr, score_thr):
            success = True
            chosen = (rep.value, texture.copy(), support.copy())
    return (chosen if chosen else best), success, iterations


def pgd0_attack(
    oracle: Oracle,
    image: ImagePlane,
    objective: Objective,
    n0: int,
    steps: int = 100,
    step_size: float = 0.05,
    early_stop: bool = True,
    iou_thr: float = 0.5,
    score_thr: float = 0.5,
    restarts: int = 0,
    rng_seed: int = 0,
) -> AdversarialExample:
    """Gradient ascent on a dense texture with an l0 projection each step.

    After every clipped ascent step, only the n0 spatial pixels with the
    largest channel-summed absolute deviation from the base keep their
    perturbation; the rest are reset to the base image. Extra ``restarts``
    rerun the loop from seeded uniform-random textures while cycling the
    step size over several scales, keeping the best outcome; both kinds
    of diversity unstick the support selection on hard instances.
    """
    if n0 < 1:
        raise ContractViolationError("pgd0 requires n0 >= 1")
    rng = np.random.default_rng(rng_seed)
    step_scales = (1.0, 0.25, 4.0, 16.0, 0.0625)
    best = None
    success_any = False
    iterations = 0
    for attempt in range(restarts + 1):
        # alternate clean/random starts while cycling the step scale
        init = image.values.copy() if attempt % 2 == 0 else rng.uniform(0.0, 1.0, size=image.values.shape)
        alpha = step_size * step_scales[attempt % len(step_scales)]
        (value, texture, support), success, iters = _pgd0_single(
            oracle, image, objective, n0, steps, alpha, early_stop, iou_thr, score_thr, init
        )
        iterations += iters
        if best is None or value > best[0] or (success and not success_any):
            best = (value, texture, support)
        success_any = success_any or success
        if early_stop and success_any:
            break
    value, texture, support = best
    return AdversarialExample(
        base=image,
        mask=BinaryMask(support),
        texture=PerturbationTexture(texture),
        iterations=iterations,
        value=value,
        success=success_any,
    )


def cw_l0_attack(
    oracle: Oracle,
    image: ImagePlane,
    objective: Objective,
    n0: int,
    inner_steps: int = 30,
    step_size: float = 0.05,
    removal_batch: int = 1,
    iou_thr: float = 0.5,
    score_thr: float = 0.5,
) -> AdversarialExample:
    """Iterative pruning: optimize on an allowed set, drop the weakest pixels.

    Each round optimizes the texture on the allowed support, then removes
    the ``removal_batch`` pixels with the smallest |grad * (t - x)|
    contribution until only n0 remain; the survivors get a final
    re-optimization.
    """
    if n0 < 1:
        raise ContractViolationError("cw_l0 requires n0 >= 1")
    if removal_batch < 1:
        raise ContractViolationError("removal_batch must be >= 1")
    allowed = np.ones(image.shape, dtype=bool)
    tcfg = TextureOptConfig(
        step_size=step_size, max_steps=inner_steps, early_stop=False,
        iou_thr=iou_thr, score_thr=score_thr,
    )
    texture = PerturbationTexture.from_image(image)

    while int(allowed.sum()) > n0:
        mask = BinaryMask(allowed)
        res = optimize_texture(oracle, image, mask, objective, tcfg, init=texture)
        texture = res.texture
        composed = compose_adversarial(image, mask, texture)
        grad = report(oracle, composed, objective, want_grad=True).grad
        if grad is None or not np.isfinite(grad).all():
            raise NumericFailureError("non-finite gradient in cw_l0 pruning")
        contribution = np.abs((grad * (texture.values - image.values)).sum(axis=2))
        contribution[~allowed] = np.inf
        n_remove = min(removal_batch, int(allowed.sum()) - n0)
        order = np.argsort(contribution.ravel(), kind="stable")[:n_remove]
        removed = np.zeros(allowed.size, dtype=bool)
        removed[order] = True
        allowed &= ~removed.reshape(allowed.shape)
        # removed pixels revert to the base image
        texture = PerturbationTexture(
            np.where(allowed[:, :, None], texture.values, image.values)
        )

    mask = BinaryMask(allowed)
    final_cfg = replace(tcfg, early_stop=True)
    res = optimize_texture(oracle, image, mask, objective, final_cfg, init=texture)
    deviation = np.abs(res.texture.values - image.values).sum(axis=2) > 0
    return AdversarialExample(
        base=image,
        mask=BinaryMask(allowed & deviation),
        texture=res.texture,
        iterations=res.steps_run,
        value=res.texture_value,
        success=res.success,
    )


def brute_force_attack(
    oracle: Oracle,
    image: ImagePlane,
    objective: Objective,
    n0: int,
    limit: BruteForceLimit = BruteForceLimit(),
    tcfg: TextureOptConfig | None = None,
) -> tuple[BinaryMask, float]:
    """Exhaustive search over all n0-pixel supports; the optimality oracle.

    For the linear toy with a vanishing objective the per-subset texture is
    closed-form (0/1 by weight sign); any other oracle falls back to running
    the texture optimizer per subset. Guarded by ``limit``.
    """
    h, w = image.shape
    total = math.comb(h * w, n0)
    if total > limit.max_subsets:
        raise CombinatorialBlowupError(
            f"C({h * w}, {n0}) = {total} exceeds max_subsets {limit.max_subsets}"
        )
    if n0 == 0:
        return BinaryMask.empty(h, w), evaluate(oracle, image, objective).value

    closed_form = (
        isinstance(oracle, LinearToyOracle) and objective.kind == VANISHING
    )
    if closed_form:
        optimal = oracle.optimal_vanishing_texture(image)
    if tcfg is None:
        tcfg = TextureOptConfig(step_size=0.1, max_steps=60, early_stop=False)

    best_value = -np.inf
    best_subset: tuple[int, ...] | None = None
    for subset in itertools.combinations(range(h * w), n0):
        bits = np.zeros(h * w, dtype=bool)
        bits[list(subset)] = True
        mask = BinaryMask(bits.reshape(h, w))
        if closed_form:
            composed = compose_adversarial(
                image, mask, PerturbationTexture(optimal)
            )
            value = evaluate(oracle, composed, objective).value
        else:
            value = optimize_texture(oracle, image, mask, objective, tcfg).best_value
        # strict improvement keeps the lexicographically smallest argmax
        if value > best_value:
            best_value, best_subset = value, subset

    bits = np.zeros(h * w, dtype=bool)
    bits[list(best_subset)] = True
    return BinaryMask(bits.reshape(h, w)), float(best_value)
