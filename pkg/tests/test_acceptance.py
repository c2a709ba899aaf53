"""Acceptance gate: one test per release criterion, at pinned tolerances.

Each test prints a single PASS line with its runtime when it succeeds (run
with ``pytest -s tests/test_acceptance.py`` to see them); any assertion
failure is a release blocker.
"""

import json
import time

import numpy as np
import pytest
import torch

from click.testing import CliRunner

from ascattack.baselines import brute_force_attack, cw_l0_attack, pgd0_attack
from ascattack.cli import main as cli_main
from ascattack.conformance import run_conformance
from ascattack.core import (
    AttackBudget,
    BinaryMask,
    ImagePlane,
    ObjectTarget,
    PerturbationTexture,
    compose_adversarial,
    resolve_budget,
)
from ascattack.metrics import ciou, grid_tiles, iou, nac_over_areas, region_partition
from ascattack.oracles import (
    BOXSHIFT,
    MISLABEL,
    VANISHING,
    Objective,
    toy_edge_detector,
    toy_linear_detector,
)
from ascattack.oracles.base import evaluate
from ascattack.patterns import PATTERN_KINDS, PatternSpec, contour_from_segmentation, erode, generate_pattern
from ascattack.protocol import OracleTCPServer, connect_tcp, decode_image, encode_image
from ascattack.sampler import (
    SamplerConfig,
    ThetaField,
    asc_attack,
    project_theta,
    sample_masks,
    theta_init,
    theta_update,
)
from ascattack.scenes import make_scene, scene_to_files
from ascattack.texture import TextureOptConfig, optimize_texture

from conftest import fd_gradient_errors
from test_metrics import reference_ciou

torch.set_num_threads(1)


def report_line(name, t0, detail=""):
    print(f"[PASS] {name} ({time.time() - t0:.1f}s){' — ' + detail if detail else ''}")


def random_target(rng, canvas):
    side_w = int(rng.integers(4, canvas - 4))
    side_h = int(rng.integers(4, canvas - 4))
    x0 = int(rng.integers(0, canvas - side_w))
    y0 = int(rng.integers(0, canvas - side_h))
    bits = np.zeros((canvas, canvas), dtype=bool)
    bits[y0 : y0 + side_h, x0 : x0 + side_w] = True
    if rng.uniform() < 0.3:  # knock out a corner: non-rectangular segmentation
        bits[y0 : y0 + side_h // 2, x0 : x0 + side_w // 2] = False
    if not bits.any():
        bits[y0, x0] = True
    seg = BinaryMask(bits)
    rows, cols = np.nonzero(bits)
    bbox = (float(cols.min()), float(rows.min()),
            float(cols.max() - cols.min() + 1), float(rows.max() - rows.min() + 1))
    parts = (seg,)
    return ObjectTarget(bbox=bbox, category=int(rng.integers(0, 4)), segmentation=seg,
                        part_segmentation=parts)


def test_l0_hard_constraint():
    """Every mask from every path satisfies popcount <= N0. Exact, < 10 s."""
    t0 = time.time()
    rng = np.random.default_rng(2024)
    checked = 0
    # 1000 randomized (pattern, budget, target) cases
    while checked < 1000:
        canvas = int(rng.integers(16, 64))
        target = random_target(rng, canvas)
        if rng.uniform() < 0.5:
            budget = AttackBudget.fraction(float(rng.uniform(0.01, 0.95)))
        else:
            budget = AttackBudget.absolute(int(rng.integers(0, canvas * canvas)))
        n0 = resolve_budget(budget, target)
        kind = PATTERN_KINDS[checked % len(PATTERN_KINDS)]
        mask = generate_pattern(PatternSpec(kind, n0), target, (canvas, canvas))
        assert mask.popcount() <= n0, (kind, n0, mask.popcount())
        checked += 1
    # masks emitted by the attack paths on a small instance
    img = ImagePlane(np.random.default_rng(5).uniform(0.1, 0.9, size=(6, 6, 3)))
    seg = BinaryMask(np.ones((6, 6), dtype=bool))
    target = ObjectTarget(bbox=(0, 0, 6, 6), category=0, segmentation=seg)
    obj = Objective(VANISHING, target)
    oracle = toy_linear_detector(2)
    for n0 in (1, 3, 9):
        ex = pgd0_attack(oracle, img, obj, n0, steps=10, step_size=0.5, early_stop=False, score_thr=0.0)
        assert ex.l0() <= n0
        ex = cw_l0_attack(oracle, img, obj, n0, inner_steps=6, step_size=2.0, removal_batch=9, score_thr=0.0)
        assert ex.l0() <= n0
        res = asc_attack(
            oracle, img, obj, AttackBudget.absolute(n0),
            SamplerConfig(rng_seed=n0, samples_per_round=4, max_rounds=2),
            TextureOptConfig(step_size=2.0, max_steps=4, early_stop=False, score_thr=0.0),
        )
        assert res.example.l0() <= n0
        for rnd in res.rounds:
            assert rnd.mask_popcount <= n0
    elapsed = time.time() - t0
    assert elapsed < 10.0, f"l0 sweep too slow: {elapsed:.1f}s"
    report_line("l0-hard-constraint", t0, f"{checked} pattern cases + attack paths")


def test_gradient_correctness():
    """Toy oracles match central finite differences, rel err < 1e-4, < 5 s."""
    t0 = time.time()
    target = ObjectTarget(bbox=(1, 1, 6, 6), category=2)
    for seed in (0, 1):
        image = ImagePlane(np.random.default_rng(100 + seed).uniform(0.35, 0.65, size=(8, 8, 3)))
        for oracle in (toy_linear_detector(seed), toy_edge_detector(seed)):
            for kind in (VANISHING, MISLABEL, BOXSHIFT):
                pairs = fd_gradient_errors(oracle, image, Objective(kind, target), n_probes=20)
                for diff, scale in pairs:
                    # 1e-7 absolute floor covers probes where both sides are
                    # at numerical noise level (gradients ~1e-9)
                    assert diff <= 1e-4 * scale + 1e-7, (type(oracle).__name__, kind, diff, scale)
    elapsed = time.time() - t0
    assert elapsed < 5.0, f"gradient check too slow: {elapsed:.1f}s"
    report_line("gradient-correctness", t0, "2 oracles x 3 objectives x 2 seeds x 20 probes")


def achievable_value(oracle, img, obj, mask):
    """Value of a mask under the closed-form optimal linear texture."""
    tex = PerturbationTexture(oracle.optimal_vanishing_texture(img))
    return evaluate(oracle, compose_adversarial(img, mask, tex), obj).value


def test_brute_force_optimality_equivalence():
    """pgd0 / cw-l0 / full-band sampler masks reach within 1% of the
    exhaustive optimum on >= 18/20 seeded 4x4 instances, < 2 min."""
    t0 = time.time()
    full = BinaryMask(np.ones((4, 4), dtype=bool))
    passes = {"pgd0": 0, "cwl0": 0, "oasc": 0}
    trials = 20
    for inst in range(trials):
        n0 = 1 + inst % 3
        rng = np.random.default_rng(9000 + inst)
        img = ImagePlane(rng.uniform(0.05, 0.95, size=(4, 4, 3)))
        target = ObjectTarget(bbox=(0, 0, 4, 4), category=1, segmentation=full)
        oracle = toy_linear_detector(500 + inst)
        obj = Objective(VANISHING, target)
        _, bval = brute_force_attack(oracle, img, obj, n0)
        tol = 0.01 * abs(bval)

        ex = pgd0_attack(oracle, img, obj, n0, steps=30, step_size=0.4, early_stop=False,
                         score_thr=0.0, restarts=70, rng_seed=inst)
        v = achievable_value(oracle, img, obj, ex.mask)
        assert v <= bval + 1e-9, "brute force must stay the global optimum"
        passes["pgd0"] += v >= bval - tol

        ex = cw_l0_attack(oracle, img, obj, n0, inner_steps=12, step_size=3.0,
                          removal_batch=1, score_thr=0.0)
        v = achievable_value(oracle, img, obj, ex.mask)
        assert v <= bval + 1e-9
        passes["cwl0"] += v >= bval - tol

        res = asc_attack(
            oracle, img, obj, AttackBudget.absolute(n0),
            SamplerConfig(rng_seed=inst, samples_per_round=20, max_rounds=18,
                          band_radius=0, temperature=1.0, beta=0.5),
            TextureOptConfig(step_size=3.0, max_steps=12, early_stop=False, score_thr=0.0),
            prior=full,
        )
        v = achievable_value(oracle, img, obj, res.example.mask)
        assert v <= bval + 1e-9
        passes["oasc"] += v >= bval - tol

    for method, count in passes.items():
        assert count >= 18, f"{method}: only {count}/20 within 1% of brute force"
    elapsed = time.time() - t0
    assert elapsed < 120.0, f"optimality sweep too slow: {elapsed:.1f}s"
    report_line("brute-force-optimality", t0, str(passes))


def test_morphology_fixtures():
    """Contour of a filled 10x10 is the exact 36-pixel ring; trims deterministic."""
    t0 = time.time()
    bits = np.zeros((12, 12), dtype=bool)
    bits[1:11, 1:11] = True
    seg = BinaryMask(bits)
    ring = contour_from_segmentation(seg, 36)
    assert ring.popcount() == 36
    expected = bits & ~erode(seg).bits
    assert np.array_equal(ring.bits, expected)
    # deterministic raster trim: first 20 ring pixels in row-major order
    trim = contour_from_segmentation(seg, 20)
    ring_idx = np.flatnonzero(expected.ravel())
    assert np.array_equal(np.flatnonzero(trim.bits.ravel()), ring_idx[:20])
    # analytically counted second ring: 36 + 28 pixels
    grown = contour_from_segmentation(seg, 64)
    assert grown.popcount() == 64
    second = erode(seg).bits & ~erode(seg, 2).bits
    assert int(second.sum()) == 28
    assert np.array_equal(grown.bits, expected | second)
    report_line("morphology-fixtures", t0)


def test_texture_optimizer_contract():
    """Clipping, off-mask bit-exactness, monotone best, closed-form limit."""
    t0 = time.time()
    oracle = toy_linear_detector(7)
    img = ImagePlane(np.random.default_rng(7).uniform(0.1, 0.9, size=(6, 6, 3)))
    target = ObjectTarget(bbox=(0, 0, 6, 6), category=1)
    obj = Objective(VANISHING, target)
    bits = np.zeros((6, 6), dtype=bool)
    bits[2:4, 2:4] = True
    mask = BinaryMask(bits)

    # values stay in [0, 1] even under a devastating step size
    res = optimize_texture(oracle, img, mask, obj,
                           TextureOptConfig(step_size=1e5, max_steps=4, early_stop=False, score_thr=0.0))
    assert res.texture.values.min() >= 0.0 and res.texture.values.max() <= 1.0

    # off-mask pixels bit-exact
    res = optimize_texture(oracle, img, mask, obj,
                           TextureOptConfig(step_size=0.3, max_steps=50, early_stop=False, score_thr=0.0))
    off = ~mask.bits
    assert np.array_equal(res.texture.values[off], img.values[off])

    # best-so-far monotone in the step budget
    values = [
        optimize_texture(oracle, img, mask, obj,
                         TextureOptConfig(step_size=0.3, max_steps=steps, early_stop=False, score_thr=0.0)).best_value
        for steps in (0, 2, 5, 12, 30, 80)
    ]
    assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))

    # closed-form convergence: |t - t*| < alpha on non-negligible weights
    alpha = 0.3
    res = optimize_texture(oracle, img, mask, obj,
                           TextureOptConfig(step_size=alpha, max_steps=600, early_stop=False, score_thr=0.0))
    opt = oracle.optimal_vanishing_texture(img)
    on = mask.bits[:, :, None] & np.broadcast_to(np.abs(oracle.weights(6, 6)) > 0.05, (6, 6, 3))
    assert np.abs(res.texture.values[on] - opt[on]).max() < alpha
    report_line("texture-optimizer-contract", t0)


def test_map_sampler_contracts():
    """Update rule exact at beta grid, halving contraction, top-k limit, band containment."""
    t0 = time.time()
    contour_bits = np.zeros((9, 9), dtype=bool)
    contour_bits[4, 4] = True
    field0 = theta_init(BinaryMask(contour_bits), 2)
    rng = np.random.default_rng(3)
    theta = field0.theta0 + rng.uniform(-0.3, 0.3, size=field0.theta0.shape)
    theta[~field0.band.bits] = 0.0
    field = ThetaField(theta=theta, theta0=field0.theta0, band=field0.band, band_radius=2)
    surrogate = rng.uniform(size=theta.shape)
    surrogate[~field.band.bits] = 0.0

    for beta in (0.0, 0.5, 1.0):
        out = theta_update(field, surrogate, beta)
        expected = (1 - beta) * field.theta + beta * (surrogate + field.theta0)
        expected[~field.band.bits] = 0.0
        assert np.array_equal(out.theta, expected), f"update not exact at beta={beta}"

    # geometric contraction to theta0 under a zero surrogate
    zero = np.zeros_like(theta)
    cur = field
    dist = np.abs(cur.theta - cur.theta0).max()
    for _ in range(8):
        cur = theta_update(cur, zero, 0.5)
        new = np.abs(cur.theta - cur.theta0).max()
        assert abs(new - dist / 2) <= 1e-12
        dist = new

    # temperature floor reduces sampling to the deterministic projection
    arr = np.random.default_rng(11).uniform(size=(6, 6))
    band = BinaryMask(np.ones((6, 6), dtype=bool))
    tf = ThetaField(theta=arr, theta0=arr.copy(), band=band, band_radius=0)
    proj = project_theta(tf, 9)
    for mask in sample_masks(tf, 9, 8, np.random.default_rng(0), tau=1e-9):
        assert np.array_equal(mask.bits, proj.bits)

    # every sample stays inside the band
    for mask in sample_masks(field, 10, 50, np.random.default_rng(1), tau=0.5):
        assert (mask.bits <= field.band.bits).all()
        assert mask.popcount() == 10
    report_line("map-sampler-contracts", t0)


TREND_TCFG = TextureOptConfig(step_size=60.0, max_steps=30, early_stop=True)
TREND_SCFG = dict(samples_per_round=6, max_rounds=6, band_radius=2, temperature=0.25, beta=0.5)


def test_trend_replication():
    """Success-rate ordering oasc >= fasc >= best grid >= advpatch on 50
    seeded scenes at 5% budget, and contour tiles beat interior tiles on
    nAC in >= 45/50 scenes. < 5 min."""
    t0 = time.time()
    oracle = toy_edge_detector(0)
    budget = AttackBudget.fraction(0.05)
    wins = {"oasc": 0, "fasc": 0, "advpatch": 0, "smallgrid": 0, "twobytwogrid": 0}
    nac_direction = 0
    scenes = 50
    for i in range(scenes):
        scene = make_scene(4000 + i)
        obj = Objective(VANISHING, scene.target)
        n0 = resolve_budget(budget, scene.target)
        for kind in ("advpatch", "smallgrid", "twobytwogrid"):
            mask = generate_pattern(PatternSpec(kind, n0), scene.target, scene.image.shape)
            res = optimize_texture(oracle, scene.image, mask, obj, TREND_TCFG)
            wins[kind] += res.success
        out = asc_attack(oracle, scene.image, obj, budget,
                         SamplerConfig(rng_seed=i, **TREND_SCFG), TREND_TCFG)
        wins["fasc"] += out.rounds[0].success
        wins["oasc"] += out.example.success

        part = region_partition(scene.target, contour_width=2)
        x, y, w, h = (int(round(v)) for v in scene.target.bbox)
        tiles = grid_tiles(scene.image.shape, tile_size=24, window=(x, y, w, h))
        nac_cfg = TextureOptConfig(step_size=60.0, max_steps=5, early_stop=False,
                                   score_thr=0.0, record_trace=False)
        rep = nac_over_areas(oracle, scene.image, obj, tiles, nac_cfg)
        contour_vals, interior_vals = [], []
        for name, nac in zip(rep.names, rep.nac):
            bits = tiles[name].bits
            if (bits & part.contour.bits).any():
                contour_vals.append(nac)
            elif (bits & part.inside.bits).sum() == bits.sum():
                interior_vals.append(nac)
        if contour_vals and interior_vals and np.mean(contour_vals) > np.mean(interior_vals):
            nac_direction += 1

    best_grid = max(wins["smallgrid"], wins["twobytwogrid"])
    assert wins["oasc"] >= wins["fasc"], wins
    assert wins["fasc"] >= best_grid, wins
    assert best_grid >= wins["advpatch"], wins
    assert nac_direction >= 45, f"nAC direction held in only {nac_direction}/50 scenes"
    elapsed = time.time() - t0
    assert elapsed < 300.0, f"trend suite too slow: {elapsed:.1f}s"
    report_line("trend-replication", t0, f"{wins}, nAC direction {nac_direction}/50")


def test_metric_identities():
    """IoU/CIoU identities, independent CIoU re-derivation, exact nAC endpoints."""
    t0 = time.time()
    box = (3.0, 4.0, 10.0, 12.0)
    assert iou(box, box) == 1.0
    assert ciou(box, box) == pytest.approx(1.0, abs=1e-12)
    far_a, far_b = (0, 0, 5, 5), (1000, 1000, 4, 4)
    assert iou(far_a, far_b) == 0.0
    assert ciou(far_a, far_b) < 0.0
    from ascattack.core import Detection
    from ascattack.metrics import ciou_distance_metric

    target = ObjectTarget(bbox=far_a, category=0)
    assert ciou_distance_metric([Detection(bbox=far_b, score=0.9, category=0)], target) == 0.0
    assert ciou_distance_metric([], target) == 0.0

    rng = np.random.default_rng(77)
    for _ in range(100):
        a = tuple(map(float, (rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(1, 40), rng.uniform(1, 40))))
        b = tuple(map(float, (rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(1, 40), rng.uniform(1, 40))))
        assert abs(ciou(a, b) - reference_ciou(a, b)) <= 1e-9

    # nAC normalization endpoints on a live report
    vals = np.full((20, 20, 3), 0.75)
    vals[5:15, 5:15] = 0.2
    seg = np.zeros((20, 20), dtype=bool)
    seg[5:15, 5:15] = True
    tgt = ObjectTarget(bbox=(5, 5, 10, 10), category=0, segmentation=BinaryMask(seg))
    part = region_partition(tgt, contour_width=1)
    rep = nac_over_areas(
        toy_edge_detector(0), ImagePlane(vals), Objective(VANISHING, tgt), part.as_dict(),
        TextureOptConfig(step_size=2.0, max_steps=6, early_stop=False, score_thr=0.0),
    )
    assert min(rep.nac) == 0.0 and max(rep.nac) == 1.0
    report_line("metric-identities", t0)


def test_protocol_criteria():
    """Bit-exact encoding round trips, loopback agreement, error codes. < 10 s."""
    t0 = time.time()
    for seed in range(100):
        vals = np.random.default_rng(seed).uniform(0.0, 1.0, size=(9, 7, 3))
        img = ImagePlane(vals.astype(np.float32).astype(np.float64))
        assert np.array_equal(decode_image(encode_image(img)).values, img.values)

    server = OracleTCPServer(toy_linear_detector(0))
    server.serve_background()
    try:
        host, port = server.address
        local = toy_linear_detector(0)
        remote = connect_tcp(host, port, timeout=10)
        try:
            target = ObjectTarget(bbox=(1, 1, 6, 6), category=2)
            for kind in (VANISHING, MISLABEL):
                obj = Objective(kind, target)
                img = ImagePlane(
                    np.random.default_rng(3).uniform(0.1, 0.9, size=(8, 8, 3))
                    .astype(np.float32).astype(np.float64)
                )
                lv = evaluate(local, img, obj).value
                rv = evaluate(remote, img, obj).value
                assert abs(rv - lv) <= 1e-6 * max(abs(lv), 1e-9)
        finally:
            remote.close()
        conf = run_conformance(f"remote:{host}:{port}", timeout_ms=10_000)
        assert conf.passed, [c for c in conf.checks if not c.passed]
        names = {c.name for c in conf.checks}
        assert {"error-unknown-op", "error-malformed-frame",
                "error-unsupported-objective", "error-id-regression"} <= names
    finally:
        server.stop()
    elapsed = time.time() - t0
    assert elapsed < 10.0, f"protocol criteria too slow: {elapsed:.1f}s"
    report_line("protocol", t0)


def test_cli_determinism(tmp_path):
    """Two identical-seed CLI attack runs produce byte-identical reports."""
    t0 = time.time()
    scene = make_scene(7, size=48, extent_frac=(0.5, 0.6))
    scene_to_files(scene, tmp_path, stem="scene")
    runner = CliRunner()
    args = [
        "attack", "--image", str(tmp_path / "scene.png"),
        "--annotations", str(tmp_path / "scene_annotations.json"),
        "--oracle", "toy:edge:1", "--method", "fasc", "--method", "oasc",
        "--method", "pattern:smallgrid", "--budget", "0.08", "--seed", "31",
        "--step-size", "8", "--max-steps", "10",
    ]
    reports = []
    for sub in ("r1", "r2"):
        res = runner.invoke(cli_main, args + ["--out", str(tmp_path / sub)])
        assert res.exit_code == 0, res.output
        reports.append((tmp_path / sub / "report.json").read_bytes())
    assert reports[0] == reports[1], "reports differ between identical-seed runs"
    body = json.loads(reports[0])
    assert {r["method"] for r in body["results"]} == {"fasc", "oasc", "pattern:smallgrid"}
    report_line("cli-determinism", t0)
