"""HTTP surface over the experiment coordinator."""

from __future__ import annotations

from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .errors import (
    DuplicateResponseError,
    NoWorkError,
    StaleTrialError,
    ValidationError,
)
from .service import ExperimentService


class ResponseBody(BaseModel):
    slider_index: int
    idempotency_key: str


class RatingBody(BaseModel):
    rater_id: str
    chain_id: str
    iteration: int
    score: int = Field(ge=1, le=5)


class RegisterBody(BaseModel):
    participant_id: str | None = None


def create_app(service: ExperimentService) -> FastAPI:
    app = FastAPI(title="gspvoice")
    app.state.service = service

    @app.exception_handler(ValidationError)
    async def _validation(_, exc):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(StaleTrialError)
    async def _stale(_, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(DuplicateResponseError)
    async def _dup(_, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "mode": service.mode}

    @app.post("/participants")
    def register(body: RegisterBody | None = None):
        p = service.register_participant(body.participant_id if body else None)
        return {"participant_id": p.participant_id}

    @app.get("/trials/next")
    def next_trial(participant_id: str):
        try:
            _, manifest = service.allocate_trial(participant_id)
        except NoWorkError:
            return {"status": "no_work", "retry_after_s": 5}
        return {"status": "trial", **manifest}

    @app.post("/trials/{trial_id}/response")
    def submit_response(trial_id: str, body: ResponseBody):
        return service.submit_response(trial_id, body.slider_index, body.idempotency_key)

    @app.get("/stimuli/{key}")
    def stimulus(key: str):
        wav = service.get_stimulus(key)
        return Response(content=wav.to_wav_bytes(), media_type="audio/wav")

    @app.get("/chains/{chain_id}")
    def chain(chain_id: str):
        return service.chain_view(chain_id)

    @app.get("/ratings/next")
    def next_rating(rater_id: str):
        try:
            return {"status": "rating", **service.allocate_rating(rater_id)}
        except NoWorkError:
            return {"status": "no_work", "retry_after_s": 5}

    @app.post("/ratings")
    def submit_rating(body: RatingBody):
        return service.submit_rating(body.rater_id, body.chain_id, body.iteration, body.score)

    @app.get("/export")
    def export():
        return service.export_experiment()

    return app
