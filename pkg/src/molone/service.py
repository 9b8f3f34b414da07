"""HTTP service for live human-in-the-loop preference sessions.

Sessions are benchmark-backed optimization runs exposed over a small JSON
API: create a session, fetch the pending candidate pair (with or without
its comparative explanation matrix, fixed per session at creation), submit
a choice, poll progress.  Every session persists as an append-only event
log; on restart the state is rebuilt by replaying the log through the
deterministic engine, which restores the exact pending pair.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, field

import uvicorn
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import engine
from .benchmarks import get_problem
from .engine import EngineConfig, SessionState
from .errors import ContractError, MoloneError, StalePairError, StateError
from .explain import matrix_to_json

MODE_WITH = "with_explanations"
MODE_WITHOUT = "without_explanations"
DEFAULT_COMPARISONS = 10


class CreateSessionRequest(BaseModel):
    benchmark: str
    mode: str
    seed: int | None = None
    comparisons: int = DEFAULT_COMPARISONS
    include_note: bool = True
    config: dict = {}


class ChoiceRequest(BaseModel):
    pair_id: int
    choice: str


def _round9(obj):
    """Serialize reals with 9 significant digits for stable golden payloads."""
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    return obj


@dataclass
class Session:
    session_id: str
    mode: str
    include_note: bool
    state: SessionState
    created_at: float
    updated_at: float
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """In-memory sessions backed by per-session JSONL event logs."""

    def __init__(self, data_dir: str, max_sessions: int = 256):
        self.data_dir = data_dir
        self.max_sessions = max_sessions
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        os.makedirs(data_dir, exist_ok=True)
        self._recover()

    # -- persistence -----------------------------------------------------

    def _log_path(self, session_id: str) -> str:
        return os.path.join(self.data_dir, f"{session_id}.jsonl")

    def _append_event(self, session_id: str, event: dict) -> None:
        with open(self._log_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _recover(self) -> None:
        for name in sorted(os.listdir(self.data_dir)):
            if not name.endswith(".jsonl"):
                continue
            path = os.path.join(self.data_dir, name)
            with open(path, encoding="utf-8") as fh:
                events = [json.loads(line) for line in fh if line.strip()]
            if not events or events[0].get("type") != "create":
                continue
            head = events[0]
            session = self._build_session(
                session_id=head["session_id"], benchmark=head["benchmark"],
                seed=head["seed"], mode=head["mode"],
                comparisons=head["comparisons"],
                include_note=head["include_note"],
                config_overrides=head.get("config", {}),
                created_at=head["at"])
            for event in events[1:]:
                if event.get("type") != "choice":
                    continue
                engine.submit_choice(session.state, event["pair_id"],
                                     event["choice"])
                session.updated_at = event["at"]
            self._sessions[session.session_id] = session

    # -- session lifecycle -------------------------------------------------

    def _build_session(self, session_id, benchmark, seed, mode, comparisons,
                       include_note, config_overrides, created_at) -> Session:
        overrides = dict(config_overrides or {})
        overrides["benchmark"] = benchmark
        overrides["seed"] = seed
        overrides["explanations"] = mode == MODE_WITH
        overrides["total_comparisons"] = comparisons
        overrides["comparison_source"] = "human"
        config = EngineConfig.from_dict(overrides)
        state = engine.initialize(config)
        return Session(session_id=session_id, mode=mode,
                       include_note=include_note, state=state,
                       created_at=created_at, updated_at=created_at)

    def create(self, req: CreateSessionRequest) -> Session:
        get_problem(req.benchmark)  # 400 on unknown benchmark
        if req.mode not in (MODE_WITH, MODE_WITHOUT):
            raise ContractError(f"unknown mode {req.mode!r}")
        if req.comparisons < 1:
            raise ContractError("comparisons must be >= 1")
        with self._lock:
            if len(self._sessions) >= self.max_sessions:
                raise CapacityError("session capacity exceeded")
            session_id = secrets.token_hex(8)
            while session_id in self._sessions:
                session_id = secrets.token_hex(8)
            seed = req.seed if req.seed is not None else secrets.randbits(32)
            now = time.time()
            session = self._build_session(
                session_id, req.benchmark.lower(), int(seed), req.mode,
                req.comparisons, req.include_note, req.config, now)
            self._sessions[session_id] = session
        self._append_event(session_id, {
            "type": "create", "session_id": session_id,
            "benchmark": req.benchmark.lower(), "seed": int(seed),
            "mode": req.mode, "comparisons": req.comparisons,
            "include_note": req.include_note, "config": req.config, "at": now,
        })
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise KeyError(session_id)
        return session

    def record_choice(self, session: Session, pair_id: int, choice: str) -> None:
        now = time.time()
        self._append_event(session.session_id, {
            "type": "choice", "pair_id": pair_id, "choice": choice, "at": now,
        })
        engine.submit_choice(session.state, pair_id, choice)
        session.updated_at = now


class CapacityError(MoloneError):
    pass


def _note_for(state: SessionState) -> str:
    dims = ", ".join(f"y{i + 1}" for i in state.problem.utility_dims)
    return (f"Outputs {dims} determine the utility; prefer the candidate "
            f"that maximizes their sum.")


def _sample_payload(candidate) -> dict:
    return {
        "x": candidate.x.tolist(),
        "y_pred_mean": candidate.y_mean.tolist(),
        "y_pred_std": candidate.y_std.tolist(),
    }


def _pair_payload(session: Session) -> dict:
    pending = session.state.pending
    matrix = None
    if session.mode == MODE_WITH and pending.bundle is not None:
        matrix = matrix_to_json(pending.bundle.matrix)
    payload = {
        "pair_id": pending.pair.pair_id,
        "sample_a": _sample_payload(pending.pair.a),
        "sample_b": _sample_payload(pending.pair.b),
        "explanation_matrix": matrix,
        "note": _note_for(session.state) if session.include_note else None,
    }
    return _round9(payload)


def _progress(session: Session) -> dict:
    state = session.state
    return {
        "comparisons_done": state.comparisons_done,
        "comparison_budget": state.config.comparison_budget,
        "phase": state.phase,
    }


def _status_payload(session: Session) -> dict:
    state = session.state
    return _round9({
        "session_id": session.session_id,
        "phase": state.phase,
        "mode": session.mode,
        "comparisons_done": state.comparisons_done,
        "comparison_budget": state.config.comparison_budget,
        "trajectory": list(state.trajectory),
        "config": state.config.resolved(),
        "created_at": session.created_at,
        "updated_at": session.updated_at,
    })


def _final_summary(session: Session) -> dict:
    state = session.state
    return _round9({
        "phase": state.phase,
        "comparisons_done": state.comparisons_done,
        "best_utility_so_far": engine.best_so_far(state),
        "trajectory": list(state.trajectory),
    })


def create_app(data_dir: str, max_sessions: int = 256) -> FastAPI:
    app = FastAPI(title="molone session service", version="1")
    store = SessionStore(data_dir, max_sessions)
    app.state.store = store

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        try:
            session = store.create(req)
        except CapacityError as exc:
            raise HTTPException(503, str(exc))
        except (ContractError, MoloneError) as exc:
            raise HTTPException(400, str(exc))
        with session.lock:
            return {
                "session_id": session.session_id,
                "seed": session.state.config.seed,
                "benchmark": session.state.config.benchmark,
                "mode": session.mode,
                "comparison_budget": session.state.config.comparison_budget,
                "pair": _pair_payload(session),
            }

    def _session_or_404(session_id: str) -> Session:
        try:
            return store.get(session_id)
        except KeyError:
            raise HTTPException(404, f"unknown session {session_id!r}")

    @app.get("/v1/sessions/{session_id}/pair")
    def get_pair(session_id: str):
        session = _session_or_404(session_id)
        with session.lock:
            if session.state.phase == engine.DONE:
                raise HTTPException(409, detail=_final_summary(session))
            return _pair_payload(session)

    @app.post("/v1/sessions/{session_id}/choice")
    def post_choice(session_id: str, req: ChoiceRequest):
        session = _session_or_404(session_id)
        if req.choice not in ("A", "B"):
            raise HTTPException(400, "choice must be 'A' or 'B'")
        with session.lock:
            state = session.state
            if state.phase == engine.DONE:
                raise HTTPException(409, detail=_final_summary(session))
            if (state.pending is None
                    or state.pending.pair.pair_id != req.pair_id):
                raise HTTPException(409, f"pair {req.pair_id} is not pending")
            try:
                store.record_choice(session, req.pair_id, req.choice)
            except (StalePairError, StateError) as exc:
                raise HTTPException(409, str(exc))
            except ContractError as exc:
                raise HTTPException(400, str(exc))
            return _round9({
                "accepted": True,
                "next_phase": state.phase,
                "progress": _progress(session),
            })

    @app.get("/v1/sessions/{session_id}/status")
    def get_status(session_id: str):
        session = _session_or_404(session_id)
        with session.lock:
            return _status_payload(session)

    return app


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="molone-service")
    parser.add_argument("--bind", default=os.environ.get("MOLONE_BIND",
                                                         "127.0.0.1:8000"))
    parser.add_argument("--data-dir",
                        default=os.environ.get("MOLONE_DATA_DIR", "./sessions"))
    parser.add_argument("--max-sessions", type=int,
                        default=int(os.environ.get("MOLONE_MAX_SESSIONS", "256")))
    args = parser.parse_args(argv)
    host, _, port = args.bind.rpartition(":")
    app = create_app(args.data_dir, args.max_sessions)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))


if __name__ == "__main__":
    main()
