"""Operator CLI: a thin client over the service layer.

Every data-path subcommand builds a service request, executes it either
in process or against a remote service (``--server``), and writes the
returned artifacts under ``--out``. Exit codes: 0 success, 2 validation,
3 I/O, 4 oracle/transport, 5 internal.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path
from typing import Optional

import click
import httpx
import pydantic

from . import __version__
from .conformance import run_conformance
from .errors import (
    AscError,
    CapabilityError,
    ContractViolationError,
    NumericFailureError,
    OracleTransportError,
)
from .imaging import load_image, load_targets, png_b64, png_unb64
from .scenes import make_batch, scene_to_files
from .service import models as M
from .service.handlers import build_oracle, run_attack, run_nac, run_patterns

EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_ORACLE = 4
EXIT_INTERNAL = 5


class ServiceClient:
    """Dispatches requests in process or to a remote attack service."""

    def __init__(self, server: Optional[str]):
        self.server = server.rstrip("/") if server else None

    def _post(self, path: str, req, model):
        resp = httpx.post(f"{self.server}{path}", json=req.model_dump(mode="json"), timeout=None)
        if resp.status_code == 422:
            raise ContractViolationError(_detail(resp))
        if resp.status_code == 502:
            raise OracleTransportError(_detail(resp))
        if resp.status_code != 200:
            raise AscError(f"server returned {resp.status_code}: {_detail(resp)}")
        return model(**resp.json())

    def patterns(self, req: M.PatternsRequest) -> M.PatternsResponse:
        if self.server:
            return self._post("/v1/patterns", req, M.PatternsResponse)
        return run_patterns(req)

    def attack(self, req: M.AttackRequest) -> M.AttackResponse:
        if self.server:
            return self._post("/v1/attack", req, M.AttackResponse)
        return run_attack(req)

    def nac(self, req: M.NacRequest) -> M.NacResponse:
        if self.server:
            return self._post("/v1/nac", req, M.NacResponse)
        return run_nac(req)


def _detail(resp) -> str:
    try:
        return resp.json().get("detail", resp.text)
    except Exception:
        return resp.text


def handle_errors(fn):
    """Map engine/service exceptions to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ContractViolationError, pydantic.ValidationError, json.JSONDecodeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except (OracleTransportError, CapabilityError, NumericFailureError) as exc:
            click.echo(f"oracle error: {exc}", err=True)
            sys.exit(EXIT_ORACLE)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)
        except AscError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INTERNAL)

    return wrapper


def _parse_budget(text: str) -> M.BudgetModel:
    if text.startswith("abs:"):
        return M.BudgetModel(mode="absolute", value=int(text[4:]))
    try:
        frac = float(text)
    except ValueError:
        raise ContractViolationError(f"budget must be a fraction or abs:N, got {text!r}")
    return M.BudgetModel(mode="fraction", value=frac)


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ContractViolationError("--config must contain a JSON object")
    return data


def _target_model(image_path: str, annotations: str, index: int) -> tuple[M.TargetModel, object]:
    image = load_image(image_path)
    targets = load_targets(annotations, image.shape)
    if not (0 <= index < len(targets)):
        raise ContractViolationError(f"target index {index} out of range ({len(targets)} targets)")
    t = targets[index]
    from .imaging import mask_to_png_bytes

    model = M.TargetModel(
        bbox=t.bbox,
        category=t.category,
        segmentation_png_b64=png_b64(mask_to_png_bytes(t.segmentation)) if t.segmentation else None,
        parts_png_b64=[png_b64(mask_to_png_bytes(p)) for p in t.part_segmentation]
        if t.part_segmentation
        else None,
    )
    return model, image


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _echo_config(cfg: dict, image_path: str, annotations: str) -> dict:
    cfg = dict(cfg)
    cfg["image"] = Path(image_path).name
    cfg["annotations"] = Path(annotations).name
    cfg["engine_version"] = __version__
    return cfg


@click.group()
@click.version_option(version=__version__)
def main():
    """Sparse contour-guided adversarial attacks on object detectors."""


_shared = [
    click.option("--server", default=None, help="Remote service URL (default: run in process)"),
    click.option("--out", required=True, type=click.Path(), help="Output directory"),
]


def shared_options(fn):
    for opt in reversed(_shared):
        fn = opt(fn)
    return fn


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--annotations", required=True, type=click.Path())
@click.option("--target-index", default=0, show_default=True)
@click.option("--budget", default="0.05", show_default=True, help="fraction or abs:N")
@click.option("--kinds", default=None, help="comma-separated pattern kinds (default: all)")
@shared_options
@handle_errors
def patterns(image_path, annotations, target_index, budget, kinds, server, out):
    """Generate the fixed prior masks for one target."""
    target, image = _target_model(image_path, annotations, target_index)
    req = M.PatternsRequest(
        height=image.height,
        width=image.width,
        target=target,
        budget=_parse_budget(budget),
        kinds=kinds.split(",") if kinds else None,
    )
    resp = ServiceClient(server).patterns(req)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"budget_resolved": resp.budget_resolved, "patterns": []}
    for entry in resp.patterns:
        mask_file = out_dir / f"{entry.kind}_mask.png"
        mask_file.write_bytes(png_unb64(entry.mask_png_b64))
        summary["patterns"].append(
            {"kind": entry.kind, "popcount": entry.popcount, "file": mask_file.name}
        )
    _write_json(out_dir / "patterns_summary.json", summary)
    click.echo(f"wrote {len(resp.patterns)} masks to {out_dir}")


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path(), help="JSON config file")
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--annotations", required=True, type=click.Path())
@click.option("--target-index", default=0, show_default=True)
@click.option("--oracle", default=None, help="toy:{linear|edge}:SEED | remote:HOST:PORT | stdio:CMD")
@click.option("--method", "methods", multiple=True, help="fasc|oasc|pgd0|cwl0|pattern:<kind>")
@click.option("--objective", default=None, type=click.Choice(["vanishing", "mislabel", "boxshift"]))
@click.option("--budget", default=None, help="fraction or abs:N")
@click.option("--seed", default=None, type=int)
@click.option("--step-size", default=None, type=float)
@click.option("--max-steps", default=None, type=int)
@click.option("--score-thr", default=None, type=float)
@shared_options
@handle_errors
def attack(config_path, image_path, annotations, target_index, oracle, methods, objective,
           budget, seed, step_size, max_steps, score_thr, server, out):
    """Run one or more attack methods against a target and emit a report."""
    cfg = _load_config(config_path)
    oracle = oracle or cfg.get("oracle", "toy:edge:0")
    methods = list(methods) or cfg.get("methods", ["fasc"])
    objective = objective or cfg.get("objective", "vanishing")
    budget_model = _parse_budget(budget) if budget else M.BudgetModel(**cfg.get("budget", {"mode": "fraction", "value": 0.05}))
    seed = seed if seed is not None else cfg.get("seed", 0)
    optimizer = M.OptimizerModel(**cfg.get("optimizer", {}))
    if step_size is not None:
        optimizer.step_size = step_size
    if max_steps is not None:
        optimizer.max_steps = max_steps
    if score_thr is not None:
        optimizer.score_thr = score_thr
    sampler = M.SamplerModel(**cfg.get("sampler", {}))
    baseline = M.BaselineModel(**cfg.get("baseline", {}))
    defense = M.DefenseModel(**cfg["defense"]) if cfg.get("defense") else None

    target, image = _target_model(image_path, annotations, target_index)
    from .imaging import image_to_png_bytes

    req = M.AttackRequest(
        image_png_b64=png_b64(image_to_png_bytes(image)),
        target=target,
        oracle=oracle,
        objective=objective,
        methods=methods,
        budget=budget_model,
        seed=seed,
        optimizer=optimizer,
        sampler=sampler,
        baseline=baseline,
        defense=defense,
    )
    resp = ServiceClient(server).attack(req)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "engine_version": resp.engine_version,
        "config": _echo_config(resp.config_echo, image_path, annotations),
        "results": [],
    }
    for res in resp.results:
        stem = res.method.replace(":", "_")
        (out_dir / f"{stem}_adv.png").write_bytes(png_unb64(res.adversarial_png_b64))
        (out_dir / f"{stem}_mask.png").write_bytes(png_unb64(res.mask_png_b64))
        entry = res.model_dump(exclude={"adversarial_png_b64", "mask_png_b64", "trace_csv"})
        if res.trace_csv:
            trace_file = out_dir / f"{stem}_trace.csv"
            trace_file.write_text(res.trace_csv)
            entry["trace_file"] = trace_file.name
        report["results"].append(entry)
    if resp.errors:
        report["errors"] = [e.model_dump() for e in resp.errors]
    _write_json(out_dir / "report.json", report)
    click.echo(f"report written to {out_dir / 'report.json'}")
    if resp.errors:
        for e in resp.errors:
            click.echo(f"oracle error in {e.method}: {e.error}", err=True)
        sys.exit(EXIT_ORACLE)


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--annotations", required=True, type=click.Path())
@click.option("--target-index", default=0, show_default=True)
@click.option("--oracle", default="toy:edge:0", show_default=True)
@click.option("--objective", default="vanishing", type=click.Choice(["vanishing", "mislabel", "boxshift"]))
@click.option("--mode", default="grid", type=click.Choice(["grid", "partition"]), show_default=True)
@click.option("--tile-size", default=8, show_default=True)
@click.option("--contour-width", default=1, show_default=True)
@click.option("--window", default="image", type=click.Choice(["image", "bbox"]), show_default=True)
@click.option("--step-size", default=0.05, show_default=True, type=float)
@click.option("--max-steps", default=30, show_default=True, type=int)
@shared_options
@handle_errors
def nac(image_path, annotations, target_index, oracle, objective, mode, tile_size,
        contour_width, window, step_size, max_steps, server, out):
    """Per-area adversarial-contribution heatmap and table."""
    target, image = _target_model(image_path, annotations, target_index)
    from .imaging import image_to_png_bytes

    req = M.NacRequest(
        image_png_b64=png_b64(image_to_png_bytes(image)),
        target=target,
        oracle=oracle,
        objective=objective,
        mode=mode,
        tile_size=tile_size,
        contour_width=contour_width,
        window=window,
        optimizer=M.OptimizerModel(step_size=step_size, max_steps=max_steps, early_stop=False),
    )
    resp = ServiceClient(server).nac(req)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "nac.csv").write_text(resp.csv)
    if resp.heatmap_png_b64:
        (out_dir / "nac_heatmap.png").write_bytes(png_unb64(resp.heatmap_png_b64))
    click.echo(f"nAC table written to {out_dir / 'nac.csv'}")


@main.command("protocol-check")
@click.argument("endpoint")
@click.option("--timeout-ms", default=None, type=int)
@handle_errors
def protocol_check(endpoint, timeout_ms):
    """Probe an oracle endpoint for protocol conformance."""
    report = run_conformance(endpoint, timeout_ms)
    for check in report.checks:
        status = "ok" if check.passed else "FAIL"
        click.echo(f"[{status}] {check.name}" + (f" — {check.detail}" if check.detail else ""))
    for warning in report.warnings:
        click.echo(f"warning: {warning}")
    if not report.passed:
        sys.exit(1)
    click.echo("all checks passed")


@main.command()
@click.option("--oracle", default="toy:linear:0", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=0, show_default=True, help="0 picks a free port")
@click.option("--stdio", is_flag=True, help="serve one session on stdin/stdout")
@handle_errors
def serve(oracle, host, port, stdio):
    """Serve a local oracle over the wire protocol."""
    from .protocol import OracleTCPServer, serve_stdio

    orc = build_oracle(oracle)
    if stdio:
        serve_stdio(orc)
        return
    server = OracleTCPServer(orc, host=host, port=port)
    click.echo(f"serving {oracle} on {server.address[0]}:{server.address[1]}", err=True)
    print(server.address[1], flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()


@main.command("serve-api")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8800, show_default=True)
@handle_errors
def serve_api(host, port):
    """Run the HTTP attack service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--count", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=192, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def scenes(count, seed, size, out):
    """Generate synthetic demo scenes with annotations."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(make_batch(count, seed=seed, size=size)):
        scene_to_files(scene, out_dir, stem=f"scene{i:03d}")
    click.echo(f"wrote {count} scenes to {out_dir}")


if __name__ == "__main__":
    main()
