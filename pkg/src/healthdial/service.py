"""HTTP API over the authoring engine: material intake, planning with
revision cues, plan approval, per-session dialogue generation, option
suggestions, command-based editing with undo/redo, playthrough preview, and
deterministic export. One process, one store; a per-project lock serializes
writers while readers and play sessions work on immutable snapshots."""

from __future__ import annotations

import base64
import threading
from collections import defaultdict
from dataclasses import replace
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from . import editing, orchestration, runtime
from .config import Settings, load_settings
from .editing import CommandKind, EditCommand, project_hash, revision_count
from .exceptions import (
    EditError,
    HealthDialError,
    InvalidStructuredOutputError,
    NoNovelOptionsError,
    ParseFailure,
    PlayError,
    ProviderError,
    SerializeError,
    StoreError,
)
from .markup import document_for, parse, serialize
from .model import (
    Material,
    MaterialSource,
    Project,
    SessionPlan,
    SessionTopic,
    fsm_to_dict,
    plan_to_dict,
    validate_fsm,
)
from .orchestration import LlmProvider, RevisionCue, ScriptedProvider
from .store import ProjectStore

#: Key-point text recorded for sessions created by raw-markup import, which
#: carries topics but no plan details.
IMPORTED_KEY_POINT = "imported dialogue"


class CreateProjectBody(BaseModel):
    title: str = ""
    material_text: Optional[str] = None
    material_base64: Optional[str] = None
    filename: Optional[str] = None


class PlanBody(BaseModel):
    cue: Optional[str] = None


class SuggestBody(BaseModel):
    count: int = 3


class EditBody(BaseModel):
    kind: str
    payload: dict


class ChooseBody(BaseModel):
    index: int


def _error_body(code: str, message: str, details: Optional[list] = None) -> dict:
    return {"code": code, "message": message, "details": details or []}


def _http_error(status: int, code: str, message: str, details: Optional[list] = None) -> HTTPException:
    return HTTPException(status_code=status, detail=_error_body(code, message, details))


def create_app(
    store: Optional[ProjectStore] = None,
    settings: Optional[Settings] = None,
    provider: Optional[LlmProvider] = None,
) -> FastAPI:
    settings = settings or load_settings()
    store = store or ProjectStore(settings.store_root)

    app = FastAPI(title="healthdial", version="0.1.0")
    app.state.store = store
    app.state.settings = settings
    app.state.plays = {}
    app.state.idempotency = {}
    app.state.locks = defaultdict(threading.Lock)
    app.state.provider = provider

    def get_provider() -> LlmProvider:
        if app.state.provider is not None:
            return app.state.provider
        if settings.fixtures_dir:
            app.state.provider = ScriptedProvider.from_dir(settings.fixtures_dir)
            return app.state.provider
        try:
            return orchestration.HttpProvider(
                settings.provider_endpoint, settings.provider_api_key, settings.provider_model
            )
        except ProviderError as exc:
            raise _http_error(502, "provider-unreachable", str(exc))

    def require_auth(authorization: str = Header(default="")) -> None:
        if not settings.token:
            return
        if authorization != f"Bearer {settings.token}":
            raise _http_error(401, "unauthorized", "missing or invalid bearer token")

    auth = Depends(require_auth)

    def load_project(project_id: str) -> Project:
        try:
            return store.load(project_id)
        except StoreError as exc:
            raise _http_error(404, "unknown-project", str(exc))

    def project_summary(project: Project) -> dict:
        progress = store.load_progress(project.project_id)
        return {
            "project_id": project.project_id,
            "title": project.material.title,
            "material_source": project.material.source.value,
            "plan": plan_to_dict(project.plan) if project.plan else None,
            "plan_approved": project.plan_approved,
            "fsms": {sid: fsm_to_dict(fsm) for sid, fsm in sorted(project.fsms.items())},
            "content_hash": project_hash(project),
            "revision_count": revision_count(project.history),
            "can_undo": project.history.can_undo,
            "can_redo": project.history.can_redo,
            "progress": progress.to_dict(),
        }

    def edit_result(project: Project) -> dict:
        return {
            "content_hash": project_hash(project),
            "revision_count": revision_count(project.history),
            "can_undo": project.history.can_undo,
            "can_redo": project.history.can_redo,
        }

    def idempotent(key: Optional[str], scope: str, run):
        """Replay the cached response for a repeated (scope, key) pair."""
        if not key:
            return run()
        cache_key = (scope, key)
        cached = app.state.idempotency.get(cache_key)
        if cached is not None:
            return cached
        result = run()
        app.state.idempotency[cache_key] = result
        return result

    @app.exception_handler(HTTPException)
    async def http_error_handler(_request: Request, exc: HTTPException):
        # Errors are always {code, message, details[]} at the top level.
        if isinstance(exc.detail, dict) and "code" in exc.detail:
            return JSONResponse(status_code=exc.status_code, content=exc.detail)
        return JSONResponse(
            status_code=exc.status_code, content=_error_body("error", str(exc.detail))
        )

    @app.exception_handler(HealthDialError)
    async def engine_error_handler(_request: Request, exc: HealthDialError):
        if isinstance(exc, EditError):
            status = 404 if exc.code == "unknown-target" else 409
            return JSONResponse(status_code=status, content=_error_body(exc.code, str(exc)))
        if isinstance(exc, PlayError):
            status = {"unknown-session": 404, "out-of-range": 400}.get(exc.code, 409)
            return JSONResponse(status_code=status, content=_error_body(exc.code, str(exc)))
        if isinstance(exc, (InvalidStructuredOutputError, NoNovelOptionsError)):
            exchanges = [e.to_dict() for e in exc.exchanges]
            return JSONResponse(
                status_code=422,
                content=_error_body("invalid-structured-output", str(exc), exchanges),
            )
        if isinstance(exc, ProviderError):
            return JSONResponse(status_code=502, content=_error_body("provider-unreachable", str(exc)))
        if isinstance(exc, SerializeError):
            details = [f"{d.kind.value} at {d.location}: {d.message}" for d in exc.defects]
            return JSONResponse(status_code=409, content=_error_body("invalid-fsm", str(exc), details))
        if isinstance(exc, ParseFailure):
            details = [f"line {e.line}, col {e.column}: [{e.kind.value}] {e.message}" for e in exc.errors]
            return JSONResponse(status_code=422, content=_error_body("parse-failure", str(exc), details))
        if isinstance(exc, StoreError):
            return JSONResponse(status_code=404, content=_error_body("unknown-project", str(exc)))
        return JSONResponse(status_code=500, content=_error_body("internal", str(exc)))

    # -- projects ----------------------------------------------------------------

    @app.post("/projects", status_code=201, dependencies=[auth])
    def create_project(body: CreateProjectBody, idempotency_key: Optional[str] = Header(default=None)):
        def run():
            if body.material_text is not None:
                text = body.material_text
                source = MaterialSource.PASTED
                imported_name = None
            elif body.material_base64 is not None:
                try:
                    raw = base64.b64decode(body.material_base64, validate=True)
                    text = raw.decode("utf-8")
                except Exception:
                    raise _http_error(415, "non-text-upload", "uploaded file is not UTF-8 text")
                source = MaterialSource.IMPORTED_FILE
                imported_name = body.filename
            else:
                raise _http_error(400, "empty-material", "provide material_text or material_base64")
            try:
                material = Material.create(
                    title=body.title,
                    body=text,
                    source=source,
                    imported_name=imported_name,
                    cap=settings.material_cap,
                )
            except ValueError as exc:
                raise _http_error(400, "empty-material" if "empty" in str(exc) else "oversize-material", str(exc))
            project = store.create(body.title, material)
            return {"project_id": project.project_id}

        return idempotent(idempotency_key, "create", run)

    @app.get("/projects/{project_id}", dependencies=[auth])
    def get_project(project_id: str):
        return project_summary(load_project(project_id))

    # -- planning ----------------------------------------------------------------

    @app.post("/projects/{project_id}/plan", dependencies=[auth])
    def plan_project(
        project_id: str, body: PlanBody, idempotency_key: Optional[str] = Header(default=None)
    ):
        def run():
            with app.state.locks[project_id]:
                project = load_project(project_id)
                cue = None
                if body.cue is not None and body.cue.strip():
                    if project.plan is None:
                        raise _http_error(409, "no-plan", "a revision cue requires an existing plan")
                    cue = RevisionCue(body.cue)
                plan, exchanges = orchestration.plan_sessions(
                    project.material,
                    get_provider(),
                    cue=cue,
                    prior=project.plan,
                    max_attempts=settings.max_repair_attempts,
                )
                store.append_llm_log(project_id, exchanges, context="plan")
                # Replacing the plan invalidates command inverses; new plans
                # also need fresh approval.
                project = replace(project, plan=plan, plan_approved=False, fsms={})
                project = store.reset_history(project)
                store.save_content(project)
                return plan_to_dict(plan)

        return idempotent(idempotency_key, f"plan:{project_id}", run)

    @app.put("/projects/{project_id}/plan/approve", dependencies=[auth])
    def approve_plan(project_id: str, idempotency_key: Optional[str] = Header(default=None)):
        def run():
            with app.state.locks[project_id]:
                project = load_project(project_id)
                if project.plan is None:
                    raise _http_error(409, "no-plan", "there is no plan to approve")
                project = replace(project, plan_approved=True)
                store.save_content(project)
                return {"plan_approved": True}

        return idempotent(idempotency_key, f"approve:{project_id}", run)

    # -- generation ----------------------------------------------------------------

    @app.post("/projects/{project_id}/sessions/{session_id}/generate", dependencies=[auth])
    def generate_session(
        project_id: str, session_id: str, idempotency_key: Optional[str] = Header(default=None)
    ):
        def run():
            with app.state.locks[project_id]:
                project = load_project(project_id)
                if project.plan is None or not project.plan_approved:
                    raise _http_error(409, "plan-not-approved", "approve the session plan before generating")
                session = project.plan.get(session_id)
                if session is None:
                    raise _http_error(404, "unknown-session", f"no session {session_id!r} in the plan")
                fsm, exchanges = orchestration.generate_fsm(
                    project.material,
                    project.plan,
                    session,
                    get_provider(),
                    max_attempts=settings.max_repair_attempts,
                )
                store.append_llm_log(project_id, exchanges, context=f"generate:{session_id}")
                fsms = dict(project.fsms)
                fsms[session_id] = fsm
                project = replace(project, fsms=fsms)
                project = store.reset_history(project)  # generation is not undoable
                store.save_content(project)
                coverage = orchestration.key_point_coverage(fsm, session)
                return {
                    "fsm": fsm_to_dict(fsm),
                    "coverage": {
                        point: {"covered": r.covered, "witness_states": list(r.witness_states)}
                        for point, r in coverage.items()
                    },
                }

        return idempotent(idempotency_key, f"generate:{project_id}:{session_id}", run)

    # -- suggestions ----------------------------------------------------------------

    @app.post(
        "/projects/{project_id}/sessions/{session_id}/states/{state_id}/suggest",
        dependencies=[auth],
    )
    def suggest(project_id: str, session_id: str, state_id: str, body: SuggestBody):
        project = load_project(project_id)
        fsm = project.fsms.get(session_id)
        if fsm is None:
            raise _http_error(404, "unknown-session", f"no dialogue for session {session_id!r}")
        if state_id not in fsm.states:
            raise _http_error(404, "unknown-state", f"no state {state_id!r} in session {session_id!r}")
        session = project.plan.get(session_id) if project.plan else None
        if session is None:
            session = SessionTopic(session_id=session_id, ordinal=1, title=session_id, key_points=("",))
        drafts, exchanges = orchestration.suggest_options(
            fsm,
            state_id,
            session,
            project.material,
            body.count,
            get_provider(),
            max_attempts=settings.max_repair_attempts,
        )
        store.append_llm_log(project_id, exchanges, context=f"suggest:{session_id}:{state_id}")
        return {"drafts": [{"label": d.label} for d in drafts]}

    # -- editing ----------------------------------------------------------------

    @app.post("/projects/{project_id}/edits", dependencies=[auth])
    def apply_edit(
        project_id: str, body: EditBody, idempotency_key: Optional[str] = Header(default=None)
    ):
        def run():
            with app.state.locks[project_id]:
                project = load_project(project_id)
                try:
                    kind = CommandKind(body.kind)
                except ValueError:
                    raise _http_error(400, "unknown-kind", f"unknown command kind {body.kind!r}")
                project = editing.apply(project, EditCommand(kind, body.payload))
                entry = project.history.applied[-1]
                store.save_content(project)
                store.append_edit_record(
                    project_id,
                    {
                        "op": "apply",
                        "kind": entry.command.kind.value,
                        "payload": entry.command.payload,
                        "inverse": entry.inverse,
                        "hash_after": entry.hash_after,
                    },
                )
                return edit_result(project)

        return idempotent(idempotency_key, f"edit:{project_id}", run)

    @app.post("/projects/{project_id}/undo", dependencies=[auth])
    def undo_edit(project_id: str, idempotency_key: Optional[str] = Header(default=None)):
        def run():
            with app.state.locks[project_id]:
                project = editing.undo(load_project(project_id))
                store.save_content(project)
                store.append_edit_record(project_id, {"op": "undo", "hash_after": project.history.hash_at_cursor()})
                return edit_result(project)

        return idempotent(idempotency_key, f"undo:{project_id}", run)

    @app.post("/projects/{project_id}/redo", dependencies=[auth])
    def redo_edit(project_id: str, idempotency_key: Optional[str] = Header(default=None)):
        def run():
            with app.state.locks[project_id]:
                project = editing.redo(load_project(project_id))
                store.save_content(project)
                store.append_edit_record(project_id, {"op": "redo", "hash_after": project.history.hash_at_cursor()})
                return edit_result(project)

        return idempotent(idempotency_key, f"redo:{project_id}", run)

    # -- export / import ----------------------------------------------------------------

    @app.get("/projects/{project_id}/export", dependencies=[auth])
    def export_project(project_id: str):
        project = load_project(project_id)
        pairs = []
        if project.plan is not None:
            for topic in project.plan.sessions:
                fsm = project.fsms.get(topic.session_id)
                if fsm is not None:
                    pairs.append((topic.title, fsm))
        text = serialize(document_for(pairs))
        return PlainTextResponse(text, media_type="text/plain; charset=utf-8")

    @app.post("/projects/{project_id}/import", dependencies=[auth])
    async def import_markup(
        project_id: str, request: Request, idempotency_key: Optional[str] = Header(default=None)
    ):
        raw = (await request.body()).decode("utf-8")
        cache_key = ("import", idempotency_key)
        if idempotency_key and cache_key in app.state.idempotency:
            return app.state.idempotency[cache_key]
        with app.state.locks[project_id]:
            project = load_project(project_id)
            if project.plan is not None:
                raise _http_error(409, "not-empty", "raw import is only allowed into a fresh project")
            document = parse(raw)
            sessions = tuple(
                SessionTopic(
                    session_id=entry.fsm.session_id,
                    ordinal=index,
                    title=entry.title,
                    key_points=(IMPORTED_KEY_POINT,),
                )
                for index, entry in enumerate(document.dialogues, start=1)
            )
            fsms = {entry.fsm.session_id: entry.fsm for entry in document.dialogues}
            plan = SessionPlan(sessions=sessions) if sessions else None
            project = replace(project, plan=plan, fsms=fsms, plan_approved=plan is not None)
            project = store.reset_history(project)
            store.save_content(project)
            summary = project_summary(project)
            if idempotency_key:
                app.state.idempotency[cache_key] = summary
            return summary

    # -- playthrough ----------------------------------------------------------------

    def play_view(play: runtime.PlaySession) -> dict:
        return {
            "play_id": play.play_id,
            "project_id": play.project_id,
            "session_id": play.session_id,
            "finished": play.finished,
            "options": play.current_options(),
            "transcript": [
                {"state_id": t.state_id, "agent": t.agent_utterance, "chosen": t.chosen_label}
                for t in play.transcript
            ],
        }

    @app.post("/projects/{project_id}/play/{session_id}", dependencies=[auth])
    def start_play(
        project_id: str, session_id: str, idempotency_key: Optional[str] = Header(default=None)
    ):
        def run():
            project = load_project(project_id)
            progress = store.load_progress(project_id)
            if project.plan is not None and not progress.can_start(
                project.plan, session_id, free_order=settings.free_play_order
            ):
                raise _http_error(409, "session-locked", "finish the earlier sessions first")
            play = runtime.start(project, session_id)
            progress.mark_started(session_id)
            if play.finished:
                progress.mark_completed(session_id)
            store.save_progress(project, progress)
            app.state.plays[play.play_id] = play
            return play_view(play)

        return idempotent(idempotency_key, f"play:{project_id}:{session_id}", run)

    @app.post("/play/{play_id}/choose", dependencies=[auth])
    def choose_option(
        play_id: str, body: ChooseBody, idempotency_key: Optional[str] = Header(default=None)
    ):
        def run():
            play = app.state.plays.get(play_id)
            if play is None:
                raise _http_error(404, "unknown-play", f"no play session {play_id!r}")
            play = runtime.choose(play, body.index)
            app.state.plays[play_id] = play
            if play.finished:
                project = load_project(play.project_id)
                progress = store.load_progress(play.project_id)
                progress.mark_completed(play.session_id)
                store.save_progress(project, progress)
            return play_view(play)

        return idempotent(idempotency_key, f"choose:{play_id}", run)

    @app.get("/play/{play_id}", dependencies=[auth])
    def get_play(play_id: str):
        play = app.state.plays.get(play_id)
        if play is None:
            raise _http_error(404, "unknown-play", f"no play session {play_id!r}")
        return play_view(play)

    return app


def main() -> None:  # pragma: no cover - thin uvicorn wrapper
    import uvicorn

    settings = load_settings()
    host, _, port = settings.listen.partition(":")
    uvicorn.run(create_app(settings=settings), host=host or "127.0.0.1", port=int(port or 8077))
