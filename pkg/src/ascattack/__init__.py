"""Sparse l0-constrained adversarial attacks on object detectors.

Contour-prior pixel selection with MAP-guided Monte Carlo refinement,
scattered-pixel baselines, diagnostic metrics, and a wire protocol for
remote gradient oracles.
"""

__version__ = "0.1.0"
