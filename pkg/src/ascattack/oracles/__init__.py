"""Gradient-oracle abstraction over detectors: toys, defenses, ensembles, remotes."""

from .base import (
    BOXSHIFT,
    ENSEMBLE,
    MISLABEL,
    VANISHING,
    DefenseSpec,
    Objective,
    Oracle,
    OracleReport,
    evaluate,
    gradient,
    resolve_objective,
)
from .defense import with_defense
from .ensemble import EnsembleOracle, ensemble_oracle
from .toys import EdgeToyOracle, LinearToyOracle, toy_edge_detector, toy_linear_detector

__all__ = [
    "VANISHING",
    "MISLABEL",
    "BOXSHIFT",
    "ENSEMBLE",
    "Objective",
    "OracleReport",
    "DefenseSpec",
    "Oracle",
    "evaluate",
    "gradient",
    "resolve_objective",
    "toy_linear_detector",
    "toy_edge_detector",
    "LinearToyOracle",
    "EdgeToyOracle",
    "with_defense",
    "ensemble_oracle",
    "EnsembleOracle",
]
