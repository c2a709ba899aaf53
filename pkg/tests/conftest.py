import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_gradient_errors(oracle, image, objective, n_probes=20, h=1e-5, probe_seed=7):
    """|fd - analytic| with a mixed relative/absolute tolerance denominator.

    Returns the list of (diff, scale) pairs; a probe passes when
    diff <= rtol * scale + atol.
    """
    from ascattack.core import ImagePlane
    from ascattack.oracles.base import evaluate, gradient

    g = gradient(oracle, image, objective)
    idx_rng = np.random.default_rng(probe_seed)
    out = []
    hgt, wdt = image.shape
    for _ in range(n_probes):
        r = int(idx_rng.integers(0, hgt))
        c = int(idx_rng.integers(0, wdt))
        ch = int(idx_rng.integers(0, 3))
        vp = image.values.copy()
        vp[r, c, ch] += h
        vm = image.values.copy()
        vm[r, c, ch] -= h
        fd = (
            evaluate(oracle, ImagePlane(vp), objective).value
            - evaluate(oracle, ImagePlane(vm), objective).value
        ) / (2 * h)
        an = g[r, c, ch]
        out.append((abs(fd - an), max(abs(fd), abs(an))))
    return out


def assert_gradient_matches(oracle, image, objective, rtol=1e-4, atol=1e-7, **kw):
    pairs = fd_gradient_errors(oracle, image, objective, **kw)
    for diff, scale in pairs:
        assert diff <= rtol * scale + atol, f"fd mismatch: diff={diff} scale={scale}"
