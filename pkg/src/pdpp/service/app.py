import json
import logging
import time

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import ValidationError

from pdpp import __version__
from pdpp.errors import IngestionError, NumericError
from pdpp.service.schemas import (
    EventAck,
    HealthStatus,
    IndexInfo,
    RebuildRequest,
    RejectedLine,
    RerankRequest,
    RerankResponse,
)
from pdpp.service.state import RerankService, ServiceSettings, build_service

logger = logging.getLogger(__name__)


def _index_info(service: RerankService) -> IndexInfo:
    snap = service.snapshot
    return IndexInfo(
        version=snap.version,
        users=len(snap),
        h_min=None if snap.stats is None else snap.stats.h_min,
        h_max=None if snap.stats is None else snap.stats.h_max,
    )


def _validation_response(errors) -> JSONResponse:
    # echoed inputs may hold NaN/inf, which JSON cannot carry, so keep only the diagnostics
    detail = [{k: v for k, v in err.items() if k in ("loc", "msg", "type")} for err in errors]
    return JSONResponse(status_code=422, content={"detail": detail})


def create_app(service: RerankService | None = None, settings: ServiceSettings | None = None) -> FastAPI:
    if service is None:
        service = build_service(settings or ServiceSettings.from_env())

    app = FastAPI(title="pdpp re-ranking service", version=__version__)
    app.state.service = service

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return _validation_response(exc.errors())

    @app.get("/healthz", response_model=HealthStatus)
    def healthz():
        return HealthStatus(status="ok", version=__version__, index=_index_info(service))

    # The handler parses the raw body with pydantic's JSON validator and
    # serializes the response itself: for 500-candidate payloads the generic
    # dict -> model -> jsonable path costs more than the re-ranking. It is
    # async because the work is pure CPU on immutable state.
    @app.post(
        "/rerank",
        response_model=RerankResponse,
        openapi_extra={
            "requestBody": {
                "required": True,
                "content": {"application/json": {"schema": RerankRequest.model_json_schema()}},
            }
        },
    )
    async def rerank(request: Request):
        body = await request.body()
        t0 = time.perf_counter_ns()
        try:
            req = RerankRequest.model_validate_json(body)
        except ValidationError as exc:
            return _validation_response(exc.errors())
        try:
            result = service.rerank(req.user_id, ((c.item_id, c.score) for c in req.candidates), req.k)
        except (NumericError, FloatingPointError, ArithmeticError) as exc:
            logger.error("rerank failed: %s; replay body: %s", exc, body.decode("utf-8", errors="replace"))
            raise HTTPException(status_code=500, detail=f"numeric failure: {exc}")
        out = RerankResponse(
            items=result.items,
            alpha_used=result.alpha_used,
            cold_start=result.cold_start,
            fallback_fill=result.fallback_fill,
            latency_micros=(time.perf_counter_ns() - t0) // 1000,
        )
        return Response(out.model_dump_json(), media_type="application/json")

    @app.post("/events", response_model=EventAck)
    async def events(request: Request):
        body = (await request.body()).decode("utf-8", errors="replace")
        result = service.ingest_lines(body.splitlines())
        return EventAck(
            accepted=result.accepted,
            ignored=result.ignored,
            rejected=[RejectedLine(line=n, error=e) for n, e in result.rejected],
            dead_lettered=[RejectedLine(line=n, error=e) for n, e in result.dead_lettered],
            index_version=result.index_version,
        )

    @app.post("/index/rebuild", response_model=IndexInfo)
    def rebuild(req: RebuildRequest):
        try:
            service.rebuild_index(req.snapshot_path, req.profiles_path)
        except (IngestionError, OSError, json.JSONDecodeError, KeyError) as exc:
            raise HTTPException(status_code=422, detail=f"snapshot refused, old index kept: {exc}")
        return _index_info(service)

    return app


def app_from_env() -> FastAPI:
    """Factory for ``uvicorn --factory pdpp.service.app:app_from_env``."""
    return create_app(settings=ServiceSettings.from_env())
