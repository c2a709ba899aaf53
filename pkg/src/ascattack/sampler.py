"""MAP-guided pixel selection around a contour prior.

A real-valued selection field theta lives on a dilated band around the
prior contour. Updates blend a saliency surrogate with the prior; masks
come either from a deterministic top-k projection of theta or from Monte
Carlo sampling with probabilities proportional to exp(theta / tau).
Alternating these selections with texture optimization yields the
optimized contour attack; round 0 alone is the fixed-contour attack.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (
    AdversarialExample,
    AttackBudget,
    BinaryMask,
    ImagePlane,
    compose_adversarial,
    resolve_budget,
)
from .errors import ContractViolationError, DegenerateTargetError
from .oracles.base import Objective, Oracle, gradient
from .patterns import contour_from_segmentation, dilate
from .texture import TextureOptConfig, optimize_texture

__all__ = [
    "ThetaField",
    "SamplerConfig",
    "AttackRound",
    "AscAttackResult",
    "theta_init",
    "theta_update",
    "grad_surrogate",
    "project_theta",
    "sample_masks",
    "asc_attack",
]

# sampling temperatures below this floor behave as a hard top-k
TAU_FLOOR = 1e-6


@dataclass(frozen=True)
class ThetaField:
    """Per-pixel selection parameter with its prior and admissible band."""

    theta: np.ndarray
    theta0: np.ndarray
    band: BinaryMask
    band_radius: int

    def __post_init__(self):
        if self.theta.shape != self.theta0.shape or self.theta.shape != self.band.shape:
            raise ContractViolationError("theta/theta0/band shapes must match")
        if not (np.isfinite(self.theta).all() and np.isfinite(self.theta0).all()):
            raise ContractViolationError("theta fields must be finite")


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs for the MAP selection loop."""

    beta: float = 0.3
    samples_per_round: int = 8
    max_rounds: int = 10
    temperature: float = 0.5
    band_radius: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0):
            raise ContractViolationError("beta must lie in [0, 1]")
        if self.samples_per_round < 1:
            raise ContractViolationError("samples_per_round must be >= 1")
        if self.temperature <= 0:
            raise ContractViolationError("temperature must be > 0")
        if self.band_radius < 0 or self.max_rounds < 0:
            raise ContractViolationError("band_radius and max_rounds must be >= 0")


def theta_init(contour: BinaryMask, band_radius: int) -> ThetaField:
    """Prior field: 1 on the contour, decaying linearly to 0 at the band edge."""
    if contour.popcount() == 0:
        raise DegenerateTargetError("cannot initialize theta from an empty contour")
    band = dilate(contour, band_radius) if band_radius > 0 else contour
    if band_radius == 0:
        theta0 = contour.bits.astype(np.float64)
    else:
        # Chebyshev distance to the contour via successive dilations
        dist = np.full(contour.shape, np.inf)
        current = contour
        for d in range(band_radius + 1):
            newly = current.bits & ~np.isfinite(dist)
            dist[newly] = d
            if d < band_radius:
                current = dilate(current, 1)
        theta0 = np.zeros(contour.shape, dtype=np.float64)
        inside = np.isfinite(dist)
        theta0[inside] = 1.0 - dist[inside] / band_radius
    return ThetaField(theta=theta0.copy(), theta0=theta0, band=band, band_radius=band_radius)


def theta_update(field: ThetaField, grad_surrogate: np.ndarray, beta: float) -> ThetaField:
    """Convex-combination update pulling theta toward surrogate + prior.

    theta <- (1 - beta) * theta + beta * (surrogate + theta0), pointwise;
    pixels outside the band stay exactly 0.
    """
    if grad_surrogate.shape != field.theta.shape:
        raise ContractViolationError("surrogate shape must match theta")
    if not np.isfinite(grad_surrogate).all():
        raise ContractViolationError("surrogate must be finite")
    theta = (1.0 - beta) * field.theta + beta * (grad_surrogate + field.theta0)
    theta[~field.band.bits] = 0.0
    return replace(field, theta=theta)


def grad_surrogate(
    oracle: Oracle, image: ImagePlane, objective: Objective, band: BinaryMask
) -> np.ndarray:
    """Saliency stand-in for the selection gradient on a discrete mask.

    Channel-summed absolute pixel gradient, normalized to max 1 over the
    band and zeroed outside it.
    """
    g = gradient(oracle, image, objective)
    s = np.abs(g).sum(axis=2)
    s[~band.bits] = 0.0
    peak = s.max()
    if peak > 0:
        s = s / peak
    return s


def _band_order(field: ThetaField) -> tuple[np.ndarray, np.ndarray]:
    """Flat band indices and the theta values over them (raster order)."""
    flat_idx = np.flatnonzero(field.band.bits.ravel())
    return flat_idx, field.theta.ravel()[flat_idx]


def _mask_from_flat(shape: tuple[int, int], flat_idx: np.ndarray) -> BinaryMask:
    bits = np.zeros(shape[0] * shape[1], dtype=bool)
    bits[flat_idx] = True
    return BinaryMask(bits.reshape(shape))


def project_theta(field: ThetaField, n0: int) -> BinaryMask:
    """Deterministic mask: the n0 largest theta values in the band.

    Ties break in raster order; the result has exactly min(n0, band size)
    pixels.
    """
    if n0 < 0:
        raise ContractViolationError("n0 must be >= 0")
    flat_idx, values = _band_order(field)
    k = min(n0, flat_idx.size)
    if k == 0:
        return BinaryMask.empty(*field.band.shape)
    # stable sort on descending theta keeps raster order among ties
    order = np.argsort(-values, kind="stable")[:k]
    return _mask_from_flat(field.band.shape, flat_idx[order])


def sample_masks(
    field: ThetaField, n0: int, count: int, rng: np.random.Generator, tau: float = 0.5
) -> list[BinaryMask]:
    """Monte Carlo masks: band pixels drawn without replacement, P ∝ exp(theta/tau).

    Implemented with the Gumbel top-k trick, so the temperature floor
    reduces exactly to the deterministic projection.
    """
    flat_idx, values = _band_order(field)
    k = min(n0, flat_idx.size)
    masks = []
    tau = max(tau, TAU_FLOOR)
    for _ in range(count):
        if k == 0:
            masks.append(BinaryMask.empty(*field.band.shape))
            continue
        gumbel = -np.log(-np.log(rng.uniform(size=flat_idx.size)))
        keys = values / tau + gumbel
        order = np.argsort(-keys, kind="stable")[:k]
        masks.append(_mask_from_flat(field.band.shape, flat_idx[order]))
    return masks


@dataclass(frozen=True)
class AttackRound:
    round_index: int
    best_value: float
    mask_popcount: int
    success: bool


@dataclass(frozen=True)
class AscAttackResult:
    example: AdversarialExample
    rounds: tuple[AttackRound, ...]
    budget: int

    def trace_json(self) -> list[dict]:
        return [
            {
                "round": r.round_index,
                "best_value": r.best_value,
                "mask_popcount": r.mask_popcount,
                "success": r.success,
            }
            for r in self.rounds
        ]


def asc_attack(
    oracle: Oracle,
    image: ImagePlane,
    objective: Objective,
    budget: AttackBudget,
    scfg: SamplerConfig,
    tcfg: TextureOptConfig,
    fixed_only: bool = False,
    prior: Optional[BinaryMask] = None,
) -> AscAttackResult:
    """Contour-prior sparse attack.

    Round 0 optimizes texture on the prior mask projected to the budget
    (the fixed variant). If the attack has not yet succeeded, later
    rounds update theta with a saliency surrogate, draw Monte Carlo masks
    around the contour plus the deterministic projection, optimize
    texture on each, and keep the global best. Every emitted mask
    satisfies the budget exactly. ``prior`` overrides the contour derived
    from the target segmentation (e.g. a full-frame mask makes the whole
    image the admissible band with an uninformative prior).
    """
    target = objective.target
    if prior is None and target.segmentation is None:
        raise DegenerateTargetError("contour attack requires a segmentation prior")
    n0 = resolve_budget(budget, target)
    rounds: list[AttackRound] = []

    if n0 == 0:
        mask = BinaryMask.empty(image.height, image.width)
        res = optimize_texture(oracle, image, mask, objective, replace(tcfg, max_steps=0))
        example = AdversarialExample(
            base=image, mask=mask, texture=res.texture, seed=scfg.rng_seed,
            iterations=0, value=res.texture_value, success=res.success,
        )
        rounds.append(AttackRound(0, res.best_value, 0, res.success))
        return AscAttackResult(example=example, rounds=tuple(rounds), budget=n0)

    if prior is None:
        prior = contour_from_segmentation(target.segmentation, n0)
    field = theta_init(prior, scfg.band_radius)
    # the prior itself when it fits the budget (fixed-contour semantics),
    # otherwise its top-theta projection
    round0_mask = prior if prior.popcount() <= n0 else project_theta(field, n0)

    res = optimize_texture(oracle, image, round0_mask, objective, tcfg)
    best = (res.best_value, res.texture_value, round0_mask, res.texture, res.steps_run, res.success)
    rounds.append(AttackRound(0, res.best_value, round0_mask.popcount(), res.success))

    if not fixed_only and not res.success:
        for rnd in range(1, scfg.max_rounds + 1):
            adv = compose_adversarial(image, best[2], best[3])
            surrogate = grad_surrogate(oracle, adv, objective, field.band)
            field = theta_update(field, surrogate, scfg.beta)
            rng = np.random.default_rng((scfg.rng_seed, rnd))
            candidates = sample_masks(field, n0, scfg.samples_per_round, rng, tau=scfg.temperature)
            candidates.append(project_theta(field, n0))
            round_success = False
            for mask in candidates:
                res = optimize_texture(oracle, image, mask, objective, tcfg)
                if res.success or res.best_value > best[0]:
                    best = (res.best_value, res.texture_value, mask, res.texture, res.steps_run, res.success)
                round_success = round_success or res.success
                if res.success:
                    break
            rounds.append(AttackRound(rnd, best[0], best[2].popcount(), round_success))
            if round_success:
                break

    _, value, mask, texture, iters, success = best
    example = AdversarialExample(
        base=image, mask=mask, texture=texture, seed=scfg.rng_seed,
        iterations=iters, value=value, success=success,
    )
    return AscAttackResult(example=example, rounds=tuple(rounds), budget=n0)
