"""Request/response schemas for the attack service.

Images and masks travel as base64-encoded PNG; every other field is plain
JSON. The CLI builds these models from files and writes the returned
artifacts back to disk, so the service itself never touches the
filesystem.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

PatternKind = Literal["advpatch", "fourpatch", "smallgrid", "twobytwogrid", "strip", "contour"]
ObjectiveKind = Literal["vanishing", "mislabel", "boxshift"]
MethodName = str  # fasc | oasc | pgd0 | cwl0 | pattern:<kind>


class TargetModel(BaseModel):
    bbox: tuple[float, float, float, float]
    category: int = 0
    segmentation_png_b64: Optional[str] = None
    parts_png_b64: Optional[list[str]] = None


class BudgetModel(BaseModel):
    mode: Literal["absolute", "fraction"]
    value: float


class DefenseModel(BaseModel):
    kind: Literal["gaussian", "bilateral"]
    sigma: float = 4.0
    sigmas: tuple[float, float, float] = (1.5, 1.5, 1.5)


class OptimizerModel(BaseModel):
    step_size: float = 0.05
    max_steps: int = 200
    early_stop: bool = True
    iou_thr: float = 0.5
    score_thr: float = 0.5


class SamplerModel(BaseModel):
    beta: float = 0.3
    samples_per_round: int = 8
    max_rounds: int = 10
    temperature: float = 0.5
    band_radius: int = 2


class BaselineModel(BaseModel):
    steps: int = 100
    inner_steps: int = 30
    removal_batch: int = 64


class PatternsRequest(BaseModel):
    height: int
    width: int
    target: TargetModel
    budget: BudgetModel
    kinds: Optional[list[PatternKind]] = None


class PatternEntry(BaseModel):
    kind: PatternKind
    popcount: int
    mask_png_b64: str


class PatternsResponse(BaseModel):
    budget_resolved: int
    patterns: list[PatternEntry]


class AttackRequest(BaseModel):
    image_png_b64: str
    target: TargetModel
    oracle: str = Field(description="toy:linear:SEED | toy:edge:SEED | remote:HOST:PORT | stdio:CMD")
    objective: ObjectiveKind = "vanishing"
    methods: list[MethodName] = ["fasc"]
    budget: BudgetModel = BudgetModel(mode="fraction", value=0.05)
    seed: int = 0
    optimizer: OptimizerModel = OptimizerModel()
    sampler: SamplerModel = SamplerModel()
    baseline: BaselineModel = BaselineModel()
    defense: Optional[DefenseModel] = None


class MethodResult(BaseModel):
    method: MethodName
    success: bool
    value: float
    iterations: int
    l0: int
    budget_resolved: int
    clean_detected: bool
    detected_after: bool
    adversarial_png_b64: str
    mask_png_b64: str
    trace_csv: Optional[str] = None
    rounds: Optional[list[dict]] = None


class MethodError(BaseModel):
    method: MethodName
    error: str


class AttackResponse(BaseModel):
    engine_version: str
    config_echo: dict
    results: list[MethodResult]
    errors: list[MethodError] = []


class NacRequest(BaseModel):
    image_png_b64: str
    target: Optional[TargetModel] = None
    oracle: str = "toy:edge:0"
    objective: ObjectiveKind = "vanishing"
    mode: Literal["grid", "partition"] = "grid"
    tile_size: int = 8
    contour_width: int = 1
    window: Literal["image", "bbox"] = "image"
    optimizer: OptimizerModel = OptimizerModel(max_steps=30)
    defense: Optional[DefenseModel] = None


class NacArea(BaseModel):
    name: str
    ac: float
    nac: float


class NacResponse(BaseModel):
    engine_version: str
    areas: list[NacArea]
    heatmap_png_b64: Optional[str] = None
    csv: str


class ProtocolCheckRequest(BaseModel):
    endpoint: str = Field(description="remote:HOST:PORT | stdio:CMD")
    timeout_ms: Optional[int] = None


class ProtocolCheckItem(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class ProtocolCheckResponse(BaseModel):
    passed: bool
    warnings: list[str]
    checks: list[ProtocolCheckItem]


class VersionResponse(BaseModel):
    engine_version: str
    protocol_version: int
