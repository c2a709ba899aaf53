"""FastAPI wiring around the in-memory handlers."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..conformance import run_conformance
from ..errors import (
    CapabilityError,
    ContractViolationError,
    NumericFailureError,
    OracleTransportError,
)
from . import models as M
from .handlers import run_attack, run_nac, run_patterns, run_version


def _translate(exc: Exception) -> HTTPException:
    if isinstance(exc, ContractViolationError):
        return HTTPException(status_code=422, detail=str(exc))
    if isinstance(exc, (OracleTransportError, CapabilityError, NumericFailureError)):
        return HTTPException(status_code=502, detail=str(exc))
    return HTTPException(status_code=500, detail=f"{type(exc).__name__}: {exc}")


def create_app() -> FastAPI:
    app = FastAPI(title="ascattack", description="Sparse contour-guided attack service")

    @app.get("/v1/version", response_model=M.VersionResponse)
    def version():
        return run_version()

    @app.post("/v1/patterns", response_model=M.PatternsResponse)
    def patterns(req: M.PatternsRequest):
        try:
            return run_patterns(req)
        except Exception as exc:
            raise _translate(exc) from exc

    @app.post("/v1/attack", response_model=M.AttackResponse)
    def attack(req: M.AttackRequest):
        try:
            return run_attack(req)
        except Exception as exc:
            raise _translate(exc) from exc

    @app.post("/v1/nac", response_model=M.NacResponse)
    def nac(req: M.NacRequest):
        try:
            return run_nac(req)
        except Exception as exc:
            raise _translate(exc) from exc

    @app.post("/v1/protocol-check", response_model=M.ProtocolCheckResponse)
    def protocol_check(req: M.ProtocolCheckRequest):
        try:
            report = run_conformance(req.endpoint, req.timeout_ms)
        except Exception as exc:
            raise _translate(exc) from exc
        return M.ProtocolCheckResponse(
            passed=report.passed,
            warnings=report.warnings,
            checks=[M.ProtocolCheckItem(name=c.name, passed=c.passed, detail=c.detail) for c in report.checks],
        )

    return app


app = create_app()
