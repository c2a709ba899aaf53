"""Pure request -> response functions behind the HTTP routes.

The CLI calls these directly when no server is configured, so every
handler works purely in memory and raises engine exceptions; the app
module translates those into HTTP status codes.
"""

from __future__ import annotations

import shlex

import numpy as np

from .. import __version__
from ..baselines import cw_l0_attack, pgd0_attack
from ..core import (
    AdversarialExample,
    AttackBudget,
    ImagePlane,
    ObjectTarget,
    resolve_budget,
)
from ..errors import (
    CapabilityError,
    ContractViolationError,
    NumericFailureError,
    OracleTransportError,
)
from ..imaging import (
    image_from_png_bytes,
    image_to_png_bytes,
    mask_from_png_bytes,
    mask_to_png_bytes,
    png_b64,
    png_unb64,
)
from ..metrics import grid_tiles, nac_over_areas, region_partition, still_detected
from ..oracles import DefenseSpec, Objective, with_defense
from ..oracles.base import Oracle, evaluate
from ..oracles.toys import toy_edge_detector, toy_linear_detector
from ..patterns import PATTERN_KINDS, PatternSpec, generate_pattern
from ..protocol import PROTOCOL_VERSION, connect_tcp, default_timeout, spawn_stdio
from ..sampler import SamplerConfig, asc_attack
from ..texture import TextureOptConfig, optimize_texture
from . import models as M

METHODS = ("fasc", "oasc", "pgd0", "cwl0")


def build_oracle(spec: str, defense: M.DefenseModel | None = None, timeout_ms: int | None = None) -> Oracle:
    """Instantiate an oracle from its CLI/service spec string."""
    parts = spec.split(":", 2)
    if parts[0] == "toy" and len(parts) == 3:
        kind, seed = parts[1], parts[2]
        if kind == "linear":
            oracle = toy_linear_detector(int(seed))
        elif kind == "edge":
            oracle = toy_edge_detector(int(seed))
        else:
            raise ContractViolationError(f"unknown toy oracle {kind!r}")
    elif parts[0] == "remote" and len(parts) == 3:
        timeout = timeout_ms / 1000.0 if timeout_ms else default_timeout()
        oracle = connect_tcp(parts[1], int(parts[2]), timeout=timeout)
    elif parts[0] == "stdio" and len(parts) >= 2:
        cmd = shlex.split(spec.split(":", 1)[1])
        timeout = timeout_ms / 1000.0 if timeout_ms else default_timeout()
        oracle = spawn_stdio(cmd, timeout=timeout)
    else:
        raise ContractViolationError(f"unparseable oracle spec {spec!r}")
    if defense is not None:
        oracle = with_defense(oracle, DefenseSpec(defense.kind, defense.sigma, tuple(defense.sigmas)))
    return oracle


def _target_from_model(m: M.TargetModel) -> ObjectTarget:
    seg = mask_from_png_bytes(png_unb64(m.segmentation_png_b64)) if m.segmentation_png_b64 else None
    parts = None
    if m.parts_png_b64:
        parts = tuple(mask_from_png_bytes(png_unb64(p)) for p in m.parts_png_b64)
    return ObjectTarget(bbox=tuple(m.bbox), category=m.category, segmentation=seg, part_segmentation=parts)


def _texture_cfg(m: M.OptimizerModel) -> TextureOptConfig:
    return TextureOptConfig(
        step_size=m.step_size,
        max_steps=m.max_steps,
        early_stop=m.early_stop,
        iou_thr=m.iou_thr,
        score_thr=m.score_thr,
    )


def run_patterns(req: M.PatternsRequest) -> M.PatternsResponse:
    target = _target_from_model(req.target)
    budget = AttackBudget(req.budget.mode, req.budget.value)
    n0 = resolve_budget(budget, target)
    kinds = req.kinds or list(PATTERN_KINDS)
    entries = []
    for kind in kinds:
        mask = generate_pattern(PatternSpec(kind, n0), target, (req.height, req.width))
        entries.append(
            M.PatternEntry(
                kind=kind,
                popcount=mask.popcount(),
                mask_png_b64=png_b64(mask_to_png_bytes(mask)),
            )
        )
    return M.PatternsResponse(budget_resolved=n0, patterns=entries)


def _run_method(
    method: str,
    oracle: Oracle,
    image: ImagePlane,
    objective: Objective,
    budget: AttackBudget,
    req: M.AttackRequest,
) -> tuple[AdversarialExample, list[dict] | None, str | None]:
    tcfg = _texture_cfg(req.optimizer)
    scfg = SamplerConfig(
        beta=req.sampler.beta,
        samples_per_round=req.sampler.samples_per_round,
        max_rounds=req.sampler.max_rounds,
        temperature=req.sampler.temperature,
        band_radius=req.sampler.band_radius,
        rng_seed=req.seed,
    )
    n0 = resolve_budget(budget, objective.target)
    if method in ("fasc", "oasc"):
        result = asc_attack(
            oracle, image, objective, budget, scfg, tcfg, fixed_only=method == "fasc"
        )
        return result.example, result.trace_json(), None
    if method == "pgd0":
        example = pgd0_attack(
            oracle, image, objective, n0,
            steps=req.baseline.steps, step_size=req.optimizer.step_size,
            iou_thr=req.optimizer.iou_thr, score_thr=req.optimizer.score_thr,
        )
        return example, None, None
    if method == "cwl0":
        example = cw_l0_attack(
            oracle, image, objective, n0,
            inner_steps=req.baseline.inner_steps, step_size=req.optimizer.step_size,
            removal_batch=req.baseline.removal_batch,
            iou_thr=req.optimizer.iou_thr, score_thr=req.optimizer.score_thr,
        )
        return example, None, None
    if method.startswith("pattern:"):
        kind = method.split(":", 1)[1]
        mask = generate_pattern(PatternSpec(kind, n0), objective.target, image.shape)
        res = optimize_texture(oracle, image, mask, objective, tcfg)
        example = AdversarialExample(
            base=image, mask=mask, texture=res.texture, seed=req.seed,
            iterations=res.steps_run, value=res.texture_value, success=res.success,
        )
        return example, None, res.trace_csv()
    raise ContractViolationError(f"unknown method {method!r}")


def run_attack(req: M.AttackRequest) -> M.AttackResponse:
    image = image_from_png_bytes(png_unb64(req.image_png_b64))
    target = _target_from_model(req.target)
    objective = Objective(req.objective, target)
    budget = AttackBudget(req.budget.mode, req.budget.value)
    oracle = build_oracle(req.oracle, req.defense)
    results = []
    errors = []
    try:
        clean_detected = still_detected(
            evaluate(oracle, image, objective).detections,
            target,
            iou_thr=req.optimizer.iou_thr,
            score_thr=req.optimizer.score_thr,
            require_category=req.objective == "mislabel",
        )
        for method in req.methods:
            try:
                example, rounds, trace_csv = _run_method(method, oracle, image, objective, budget, req)
                composed = example.composed()
                detected_after = still_detected(
                    evaluate(oracle, composed, objective).detections,
                    target,
                    iou_thr=req.optimizer.iou_thr,
                    score_thr=req.optimizer.score_thr,
                    require_category=req.objective == "mislabel",
                )
            except (OracleTransportError, CapabilityError, NumericFailureError) as exc:
                # keep what already completed: callers emit a partial report
                errors.append(M.MethodError(method=method, error=str(exc)))
                continue
            results.append(
                M.MethodResult(
                    method=method,
                    success=example.success,
                    value=example.value,
                    iterations=example.iterations,
                    l0=example.l0(),
                    budget_resolved=resolve_budget(budget, target),
                    clean_detected=clean_detected,
                    detected_after=detected_after,
                    adversarial_png_b64=png_b64(image_to_png_bytes(composed)),
                    mask_png_b64=png_b64(mask_to_png_bytes(example.mask)),
                    trace_csv=trace_csv,
                    rounds=rounds,
                )
            )
    finally:
        oracle.close()
    config_echo = req.model_dump(exclude={"image_png_b64", "target"})
    config_echo["target"] = {"bbox": list(req.target.bbox), "category": req.target.category}
    return M.AttackResponse(
        engine_version=__version__, config_echo=config_echo, results=results, errors=errors
    )


def run_nac(req: M.NacRequest) -> M.NacResponse:
    image = image_from_png_bytes(png_unb64(req.image_png_b64))
    target = _target_from_model(req.target) if req.target else None
    oracle = build_oracle(req.oracle, req.defense)
    try:
        if target is None:
            raise ContractViolationError("nAC requires a target annotation")
        objective = Objective(req.objective, target)
        tcfg = _texture_cfg(req.optimizer)
        heatmap_b64 = None
        if req.mode == "partition":
            partition = region_partition(target, contour_width=req.contour_width, tile_size=req.tile_size)
            areas = partition.as_dict()
            report = nac_over_areas(oracle, image, objective, areas, tcfg)
        else:
            window = None
            if req.window == "bbox":
                x, y, w, h = (int(round(v)) for v in target.bbox)
                window = (x, y, w, h)
            tiles = grid_tiles(image.shape, tile_size=req.tile_size, window=window)
            report = nac_over_areas(oracle, image, objective, tiles, tcfg)
            heatmap_b64 = png_b64(_heatmap_png(report, tiles, image.shape, req.tile_size, window))
    finally:
        oracle.close()
    areas_out = [
        M.NacArea(name=n, ac=a, nac=s) for n, a, s in zip(report.names, report.ac, report.nac)
    ]
    csv_lines = ["area,ac,nac"] + [f"{a.name},{a.ac!r},{a.nac!r}" for a in areas_out]
    return M.NacResponse(
        engine_version=__version__,
        areas=areas_out,
        heatmap_png_b64=heatmap_b64,
        csv="\n".join(csv_lines) + "\n",
    )


def _heatmap_png(report, tiles, shape, tile_size, window) -> bytes:
    """Rasterize per-tile nAC back onto the image grid as grayscale PNG."""
    import io

    from PIL import Image

    canvas = np.zeros(shape, dtype=np.float64)
    for name, nac in zip(report.names, report.nac):
        canvas[tiles[name].bits] = nac
    arr = np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def run_version() -> M.VersionResponse:
    return M.VersionResponse(engine_version=__version__, protocol_version=PROTOCOL_VERSION)
