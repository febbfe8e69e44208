"""FastAPI application exposing the assessment service."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigurationError, ContractError, IngestionError
from . import handlers
from .schemas import (AssessRequest, AssessResponse, CompareRequest, CompareResponse,
                      DetectRequest, DetectResponse, ScheduleRequest, ScheduleResponse,
                      SimulateRequest, SimulateResponse)


def create_app() -> FastAPI:
    app = FastAPI(title="fedshapley", version=__version__,
                  description="History-aware Shapley contribution assessment "
                              "for federated learning runs")

    @app.exception_handler(ConfigurationError)
    @app.exception_handler(ContractError)
    @app.exception_handler(IngestionError)
    async def invalid_input(_: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "versions": handlers.versions()}

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(request: SimulateRequest) -> SimulateResponse:
        return handlers.simulate(request)

    @app.post("/assess", response_model=AssessResponse)
    def assess(request: AssessRequest) -> AssessResponse:
        return handlers.assess_log(request)

    @app.post("/schedule", response_model=ScheduleResponse)
    def schedule(request: ScheduleRequest) -> ScheduleResponse:
        return handlers.schedule_epochs(request)

    @app.post("/detect", response_model=DetectResponse)
    def detect(request: DetectRequest) -> DetectResponse:
        return handlers.detect(request)

    @app.post("/compare", response_model=CompareResponse)
    def compare(request: CompareRequest) -> CompareResponse:
        return handlers.compare(request)

    return app


app = create_app()
