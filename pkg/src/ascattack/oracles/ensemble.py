"""Joint oracle averaging the values and gradients of several members."""

from __future__ import annotations

import numpy as np

from ..core import ImagePlane
from ..errors import CapabilityError, ContractViolationError
from .base import Objective, Oracle, OracleReport


class EnsembleOracle(Oracle):
    """Arithmetic mean of member values and gradients; detections concatenated."""

    def __init__(self, members):
        members = tuple(members)
        if len(members) < 2:
            raise ContractViolationError("ensemble needs >= 2 members")
        for m in members:
            if not m.supports_gradient:
                raise CapabilityError("all ensemble members must be gradient-capable")
        self.members = members
        common = set(members[0].supported_objectives)
        for m in members[1:]:
            common &= set(m.supported_objectives)
        self.supported_objectives = tuple(sorted(common))

    def report(self, image: ImagePlane, objective: Objective, want_grad: bool = False) -> OracleReport:
        self._check(objective, want_grad)
        reports = [m.report(image, objective, want_grad=want_grad) for m in self.members]
        value = float(np.mean([r.value for r in reports]))
        grad = None
        if want_grad:
            grad = np.mean([r.grad for r in reports], axis=0)
        detections = tuple(d for r in reports for d in r.detections)
        return OracleReport(value=value, detections=detections, grad=grad)


def ensemble_oracle(members) -> EnsembleOracle:
    """Average >= 2 gradient-capable oracles into one attack surface."""
    return EnsembleOracle(members)
