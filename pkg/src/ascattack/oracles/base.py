"""Oracle interface and objective definitions.

An oracle scores an (image, objective) pair and optionally returns the
per-pixel gradient of that score. The value convention is uniform across
objectives: it is the log-likelihood of the *wrong* prediction, so every
attack is a maximization and higher means closer to success.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import Detection, ImagePlane, ObjectTarget
from ..errors import CapabilityError, ContractViolationError

VANISHING = "vanishing"
MISLABEL = "mislabel"
BOXSHIFT = "boxshift"
ENSEMBLE = "ensemble"

OBJECTIVE_KINDS = (VANISHING, MISLABEL, BOXSHIFT, ENSEMBLE)

# keeps log terms finite as probabilities saturate
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class Objective:
    """Attack goal bound to a target object.

    ``ensemble`` objectives carry the member oracles to average over and
    are resolved to a vanishing attack on the joint oracle.
    """

    kind: str
    target: ObjectTarget
    members: tuple = ()

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ContractViolationError(f"unknown objective kind {self.kind!r}")
        if self.kind == ENSEMBLE:
            if len(self.members) < 2:
                raise ContractViolationError("ensemble objective needs >= 2 member oracles")
        object.__setattr__(self, "members", tuple(self.members))


@dataclass(frozen=True)
class OracleReport:
    """One oracle answer: objective value, optional gradient, detections."""

    value: float
    detections: tuple[Detection, ...] = ()
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "detections", tuple(self.detections))

    def without_grad(self) -> "OracleReport":
        return OracleReport(self.value, self.detections, None)


@dataclass(frozen=True)
class DefenseSpec:
    """Input-smoothing defense configuration.

    Gaussian smoothing uses ``sigma`` (0 means identity, the no-defense
    limit); bilateral filtering uses ``sigmas`` = (sigma_x, sigma_y,
    sigma_range).
    """

    kind: str  # "gaussian" | "bilateral"
    sigma: float = 4.0
    sigmas: tuple[float, float, float] = (1.5, 1.5, 1.5)

    GAUSSIAN = "gaussian"
    BILATERAL = "bilateral"

    def __post_init__(self):
        if self.kind not in (self.GAUSSIAN, self.BILATERAL):
            raise ContractViolationError(f"unknown defense kind {self.kind!r}")
        if self.kind == self.GAUSSIAN and self.sigma < 0:
            raise ContractViolationError("gaussian sigma must be >= 0")
        if self.kind == self.BILATERAL and any(s <= 0 for s in self.sigmas):
            raise ContractViolationError("bilateral sigmas must be > 0")


class Oracle:
    """Anything that can score an image and (optionally) differentiate it."""

    supports_gradient: bool = True
    supported_objectives: tuple[str, ...] = (VANISHING, MISLABEL, BOXSHIFT)

    def report(self, image: ImagePlane, objective: Objective, want_grad: bool = False) -> OracleReport:
        raise NotImplementedError

    def _check(self, objective: Objective, want_grad: bool):
        if objective.kind not in self.supported_objectives:
            raise CapabilityError(f"oracle does not support objective {objective.kind!r}")
        if want_grad and not self.supports_gradient:
            raise CapabilityError("oracle is forward-only; gradient unavailable")

    def evaluate(self, image: ImagePlane, objective: Objective) -> OracleReport:
        self._check(objective, want_grad=False)
        return self.report(image, objective, want_grad=False).without_grad()

    def gradient(self, image: ImagePlane, objective: Objective) -> np.ndarray:
        self._check(objective, want_grad=True)
        rep = self.report(image, objective, want_grad=True)
        if rep.grad is None:
            raise CapabilityError("oracle returned no gradient field")
        return rep.grad

    def close(self):
        pass


def resolve_objective(oracle: Oracle, objective: Objective) -> tuple[Oracle, Objective]:
    """Map an ensemble objective onto its joint oracle; pass others through."""
    if objective.kind == ENSEMBLE:
        from .ensemble import ensemble_oracle

        joint = ensemble_oracle(objective.members)
        return joint, Objective(VANISHING, objective.target)
    return oracle, objective


def evaluate(oracle: Oracle, image: ImagePlane, objective: Objective) -> OracleReport:
    """Forward pass: objective value plus current detections, no gradient."""
    oracle, objective = resolve_objective(oracle, objective)
    return oracle.evaluate(image, objective)


def gradient(oracle: Oracle, image: ImagePlane, objective: Objective) -> np.ndarray:
    """Per-pixel gradient of the objective value, shape H x W x 3."""
    oracle, objective = resolve_objective(oracle, objective)
    return oracle.gradient(image, objective)


def report(oracle: Oracle, image: ImagePlane, objective: Objective, want_grad: bool = False) -> OracleReport:
    """Combined value/detections/gradient query (one oracle pass where possible)."""
    oracle, objective = resolve_objective(oracle, objective)
    oracle._check(objective, want_grad)
    return oracle.report(image, objective, want_grad=want_grad)


def clip_bbox_to_grid(bbox: Sequence[float], height: int, width: int) -> tuple[int, int, int, int]:
    """Round a (x, y, w, h) box to integer pixels clipped inside the grid."""
    x, y, w, h = bbox
    x0 = min(max(int(round(x)), 0), width - 1)
    y0 = min(max(int(round(y)), 0), height - 1)
    x1 = min(max(int(round(x + w)), x0 + 1), width)
    y1 = min(max(int(round(y + h)), y0 + 1), height)
    return x0, y0, x1 - x0, y1 - y0
