"""Secondary-component gate: the TypeScript detector adapter must pass the
engine's protocol conformance probes and support attacks over the wire.

Skipped when the adapter has not been built (`npm run build` in adapter/).
"""

import shutil
from pathlib import Path

import numpy as np
import pytest

from ascattack.conformance import run_conformance
from ascattack.core import AttackBudget, resolve_budget
from ascattack.oracles import VANISHING, Objective
from ascattack.oracles.base import evaluate
from ascattack.patterns import PatternSpec, generate_pattern
from ascattack.protocol import spawn_stdio
from ascattack.scenes import make_scene
from ascattack.texture import TextureOptConfig, optimize_texture

ADAPTER = Path(__file__).resolve().parent.parent / "adapter" / "dist" / "server.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not ADAPTER.exists(),
    reason="adapter not built (run `npm install && npm run build` in adapter/)",
)


def adapter_cmd(*extra):
    return ["node", str(ADAPTER), "--stdio", "--seed", "1", *map(str, extra)]


def test_adapter_passes_protocol_conformance():
    endpoint = "stdio:" + " ".join(adapter_cmd())
    report = run_conformance(endpoint, timeout_ms=60_000)
    assert report.passed, [c for c in report.checks if not c.passed]
    names = {c.name for c in report.checks}
    assert {"handshake", "eval-smoke", "grad-smoke", "error-unknown-op",
            "error-malformed-frame", "error-unsupported-objective",
            "error-id-regression", "bye"} <= names


def test_adapter_replay_identical_across_restarts():
    scene = make_scene(8000, size=48, extent_frac=(0.55, 0.7))
    obj = Objective(VANISHING, scene.target)
    values = []
    detections = []
    for _ in range(2):
        oracle = spawn_stdio(adapter_cmd("--input-size", 48), timeout=60)
        try:
            rep = evaluate(oracle, scene.image, obj)
            values.append(rep.value)
            detections.append(rep.detections)
        finally:
            oracle.close()
    assert values[0] == values[1]
    assert detections[0] == detections[1]


def test_contour_outperforms_patch_through_the_wire():
    # small-sample sanity run: the contour prior achieves strictly larger
    # objective gains than a center patch on the served detector
    oracle = spawn_stdio(adapter_cmd("--input-size", 48), timeout=60)
    try:
        contour_gains, patch_gains = [], []
        for i in range(3):
            scene = make_scene(8000 + i, size=48, extent_frac=(0.55, 0.7))
            obj = Objective(VANISHING, scene.target)
            clean = evaluate(oracle, scene.image, obj).value
            n0 = resolve_budget(AttackBudget.fraction(0.1), scene.target)
            cfg = TextureOptConfig(step_size=10.0, max_steps=15, early_stop=False, score_thr=0.0)
            for kind, sink in (("contour", contour_gains), ("advpatch", patch_gains)):
                mask = generate_pattern(PatternSpec(kind, n0), scene.target, scene.image.shape)
                res = optimize_texture(oracle, scene.image, mask, obj, cfg)
                sink.append(res.best_value - clean)
    finally:
        oracle.close()
    assert np.mean(contour_gains) > np.mean(patch_gains), (contour_gains, patch_gains)
