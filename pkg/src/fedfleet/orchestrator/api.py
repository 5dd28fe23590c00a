"""Admin HTTP API: the operator surface the console talks to.

Plain request/response JSON over a single fixed port, fully separate from the
per-session training ports. Everything the dashboard shows comes from these
endpoints; everything it changes goes through them.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from ..aggregation import DPConfig, InvalidBudget
from ..analytics import BadQuery
from ..training import Hyperparams, TrainingError
from .registry import InvalidModel
from .service import Orchestrator, OrchestratorError, PortPoolExhausted, UnknownModel, UnknownSession


class HyperparamsBody(BaseModel):
    learning_rate: float = 0.1
    epochs: int = 1
    batch_size: int | None = None
    seed: int = 0


class DPBody(BaseModel):
    enabled: bool = False
    clip_norm: float = 1.0
    epsilon: float = 1.0
    delta: float = 1e-5
    sigma_override: float | None = None


class SessionCreateBody(BaseModel):
    kind: Literal["FL", "FA"]
    session_id: str | None = None
    model_id: str | None = None
    model_version: int | None = None
    query: dict | None = None
    task_label: str | None = None
    rounds: int = Field(default=1, ge=1)
    min_clients: int = Field(default=1, ge=1)
    client_fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    round_timeout: float = Field(default=30.0, gt=0.0)
    hyperparams: HyperparamsBody = Field(default_factory=HyperparamsBody)
    dp: DPBody = Field(default_factory=DPBody)


class RegisterResponse(BaseModel):
    model_id: str
    version: int


class ModelView(BaseModel):
    model_id: str
    version: int
    status: str
    uploaded_at: float
    arch: dict
    n_params: int


class SessionView(BaseModel):
    session_id: str
    kind: str
    state: str
    reason: str | None
    port: int | None
    current_round: int
    rounds: int
    last_global_loss: float | None
    n_clients_joined: int
    task_label: str | None
    model_id: str | None
    model_version: int | None
    query_id: str | None


class RoundView(BaseModel):
    session_id: str
    round: int
    n_selected: int
    n_completed: int
    global_loss: float | None
    started_at: float
    ended_at: float


class HealthView(BaseModel):
    status: str
    live_sessions: int


def create_app(orch: Orchestrator, console_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="fedfleet coordinator", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.post("/api/models", response_model=RegisterResponse, status_code=201)
    def register_model(document: dict):
        try:
            model_id, version = orch.register_model(document)
        except InvalidModel as exc:
            raise HTTPException(400, detail={"error": "InvalidModel", "violations": [str(v) for v in exc.violations]})
        except Exception as exc:
            raise HTTPException(400, detail={"error": "InvalidModel", "violations": [str(exc)]})
        return RegisterResponse(model_id=model_id, version=version)

    @app.get("/api/models", response_model=list[ModelView])
    def list_models():
        return [
            ModelView(
                model_id=e.model_id,
                version=e.version,
                status=e.status,
                uploaded_at=e.uploaded_at,
                arch=e.document.get("arch", {}),
                n_params=len(e.document.get("params", [])),
            )
            for e in orch.list_models()
        ]

    @app.post("/api/sessions", response_model=dict, status_code=201)
    def create_session(body: SessionCreateBody):
        try:
            hyperparams = Hyperparams(
                learning_rate=body.hyperparams.learning_rate,
                epochs=body.hyperparams.epochs,
                batch_size=body.hyperparams.batch_size,
                seed=body.hyperparams.seed,
            )
            dp = DPConfig(
                enabled=body.dp.enabled,
                clip_norm=body.dp.clip_norm,
                epsilon=body.dp.epsilon,
                delta=body.dp.delta,
                sigma_override=body.dp.sigma_override,
            )
            session = orch.create_session(
                kind=body.kind,
                session_id=body.session_id,
                model_id=body.model_id,
                model_version=body.model_version,
                query=body.query,
                task_label=body.task_label,
                rounds=body.rounds,
                min_clients=body.min_clients,
                client_fraction=body.client_fraction,
                round_timeout=body.round_timeout,
                hyperparams=hyperparams,
                dp=dp,
            )
        except UnknownModel as exc:
            raise HTTPException(404, detail=str(exc))
        except PortPoolExhausted as exc:
            raise HTTPException(409, detail=str(exc))
        except (OrchestratorError, BadQuery, TrainingError, InvalidBudget, ValueError) as exc:
            raise HTTPException(400, detail=str(exc))
        return session.cfg.to_json()

    @app.get("/api/sessions", response_model=list[SessionView])
    def list_sessions():
        return [SessionView(**view) for view in orch.list_sessions()]

    @app.get("/api/sessions/{session_id}", response_model=SessionView)
    def get_session(session_id: str):
        try:
            return SessionView(**orch.session_view(session_id))
        except UnknownSession as exc:
            raise HTTPException(404, detail=str(exc))

    @app.post("/api/sessions/{session_id}/stop", response_model=SessionView)
    def stop_session(session_id: str):
        try:
            return SessionView(**orch.stop_session(session_id))
        except UnknownSession as exc:
            raise HTTPException(404, detail=str(exc))

    @app.get("/api/sessions/{session_id}/rounds", response_model=list[RoundView])
    def session_rounds(session_id: str):
        try:
            return [RoundView(**r) for r in orch.rounds(session_id)]
        except UnknownSession as exc:
            raise HTTPException(404, detail=str(exc))

    @app.get("/api/queries/{query_id}/result")
    def query_result(query_id: str):
        result = orch.fa_result(query_id)
        if result is None:
            raise HTTPException(404, detail=f"no completed result for query {query_id!r}")
        return result

    @app.get("/api/health", response_model=HealthView)
    def health():
        return HealthView(status="ok", live_sessions=orch.live_session_count())

    if console_dir is not None and Path(console_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=str(console_dir), html=True), name="console")

        @app.get("/", include_in_schema=False)
        def root():
            return Response(status_code=307, headers={"Location": "/console/"})

    return app
