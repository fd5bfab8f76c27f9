"""HTTP service administering the coin game to live participants.

Sessions are assigned from a pending-environment plan (or created with
explicit parameters in pilot mode), play out a pre-sampled outcome
sequence one choice at a time, and persist as SessionRecords in the
same line-delimited format the synthetic pipeline writes. Clients never
see task parameters, latent states, or future outcomes.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import seeds
from .env_hmm import TaskParams, sample_trajectory
from .records import Dataset, make_session, read_dataset, write_dataset

__all__ = ["ServiceConfig", "PlanSlot", "ServicePlan", "load_plan",
           "SessionStore", "make_app"]

DEFAULT_IDLE_TIMEOUT_S = 30 * 60

INSTRUCTIONS = (
    "On each trial, predict whether the coin comes up heads or tails. "
    "After you choose, the flip is revealed and correct predictions "
    "earn points. There are {horizon} trials in a session.")


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: str
    horizon: int = 50
    root_seed: int = 0
    idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S
    points_per_correct: int = 1


@dataclass
class PlanSlot:
    """One pending environment and how many sessions it still needs."""

    task: TaskParams
    n_sessions: int
    corpus_tag: str
    iteration_index: int
    assigned: int = 0
    fulfilled: int = 0

    @property
    def open_slots(self) -> int:
        return self.n_sessions - self.assigned


@dataclass
class ServicePlan:
    horizon: int
    slots: list


def load_plan(path) -> ServicePlan:
    """Plan file: {"horizon", "slots": [{task, n_sessions, corpus_tag,
    iteration_index}]}."""
    with open(path) as fh:
        doc = json.load(fh)
    slots = []
    for entry in doc["slots"]:
        slots.append(PlanSlot(task=TaskParams.from_dict(entry["task"]),
                              n_sessions=int(entry["n_sessions"]),
                              corpus_tag=str(entry["corpus_tag"]),
                              iteration_index=int(entry["iteration_index"])))
    return ServicePlan(horizon=int(doc.get("horizon", 50)), slots=slots)


@dataclass
class LiveSession:
    session_id: str
    task: TaskParams
    outcomes: tuple  # pre-sampled, hidden from the client
    corpus_tag: str
    iteration_index: int
    slot_index: int | None
    seed: int
    participant: dict
    created_at: float
    last_touch: float
    status: str = "active"  # active | finalized | expired
    trials: list = field(default_factory=list)  # result dicts, in order
    response_times_ms: list = field(default_factory=list)
    record_path: str | None = None

    @property
    def cursor(self) -> int:
        """1-based index of the next unplayed trial."""
        return len(self.trials) + 1

    @property
    def done(self) -> bool:
        return len(self.trials) >= len(self.outcomes)

    @property
    def score(self) -> int:
        return sum(tr["correct"] for tr in self.trials)

    def public_view(self) -> dict:
        return {
            "session_id": self.session_id,
            "trial_index": self.cursor,
            "history": [{"trial_index": tr["trial_index"],
                         "action": tr["action"],
                         "outcome": tr["outcome"],
                         "correct": tr["correct"]}
                        for tr in self.trials],
            "score": self.score,
            "done": self.done,
            "status": self.status,
        }


class SessionStore:
    """All live sessions plus the plan, mutated under one lock."""

    def __init__(self, config: ServiceConfig, plan: list | None = None):
        self.config = config
        self.plan = list(plan) if plan else []
        self.sessions: dict[str, LiveSession] = {}
        self.lock = threading.Lock()
        self._counter = 0
        os.makedirs(config.data_dir, exist_ok=True)

    # -- lifecycle ---------------------------------------------------------

    def create(self, task: TaskParams | None, participant: dict) -> LiveSession:
        with self.lock:
            slot_index = None
            if task is None:
                slot_index = next(
                    (i for i, s in enumerate(self.plan) if s.open_slots > 0),
                    None)
                if slot_index is None:
                    raise HTTPException(status_code=409, detail="study full")
                slot = self.plan[slot_index]
                slot.assigned += 1
                task, tag, idx = slot.task, slot.corpus_tag, slot.iteration_index
            else:
                tag, idx = "pilot", -1
            self._counter += 1
            seed = seeds.derive(self.config.root_seed, 300, self._counter)
            traj = sample_trajectory(task, self.config.horizon, seed)
            now = time.monotonic()
            session = LiveSession(
                session_id=uuid.uuid4().hex,
                task=task,
                outcomes=tuple(int(o) for o in traj.observations),
                corpus_tag=tag,
                iteration_index=idx,
                slot_index=slot_index,
                seed=seed,
                participant=dict(participant),
                created_at=now,
                last_touch=now)
            self.sessions[session.session_id] = session
            return session

    def get(self, session_id: str) -> LiveSession:
        with self.lock:
            return self._fetch(session_id)

    def _fetch(self, session_id: str) -> LiveSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        if (session.status == "active"
                and time.monotonic() - session.last_touch
                > self.config.idle_timeout_s):
            session.status = "expired"
            # abandoned data is still data; keep whatever was played
            if session.trials and session.record_path is None:
                self._persist(session)
        return session

    # -- trial submission ----------------------------------------------------

    def submit(self, session_id: str, action: int,
               trial: int | None) -> tuple[dict, bool]:
        """Record a choice; returns (result, replayed flag)."""
        with self.lock:
            session = self._fetch(session_id)
            if session.status != "active":
                raise HTTPException(status_code=410,
                                    detail=f"session {session.status}")
            if trial is not None and trial != session.cursor:
                # retries of a recorded trial replay the original result
                recorded = next((tr for tr in session.trials
                                 if tr["trial_index"] == trial), None)
                if recorded is not None:
                    return recorded, True
                raise HTTPException(
                    status_code=422,
                    detail=f"expected trial {session.cursor}, got {trial}")
            if session.done:
                raise HTTPException(status_code=410, detail="session complete")
            now = time.monotonic()
            t = session.cursor
            outcome = session.outcomes[t - 1]
            correct = int(action == outcome)
            result = {
                "trial_index": t,
                "action": action,
                "outcome": outcome,
                "correct": correct,
                "done": t == len(session.outcomes),
                "score": session.score
                + correct * self.config.points_per_correct,
            }
            session.trials.append(result)
            session.response_times_ms.append(
                (now - session.last_touch) * 1000.0)
            session.last_touch = now
            return result, False

    # -- persistence -----------------------------------------------------------

    def finalize(self, session_id: str) -> dict:
        with self.lock:
            session = self._fetch(session_id)
            if session.record_path is not None:
                return {"path": session.record_path, "already": True,
                        "truncated": len(session.trials)
                        < len(session.outcomes)}
            if session.status == "active" and not session.done:
                raise HTTPException(status_code=409,
                                    detail="session still in progress")
            if not session.trials:
                raise HTTPException(status_code=409,
                                    detail="nothing to persist")
            truncated = self._persist(session)
            if session.status == "active":
                session.status = "finalized"
            return {"path": session.record_path, "already": False,
                    "truncated": truncated}

    def _persist(self, session: LiveSession) -> bool:
        """Append the session to its corpus file; caller holds the lock."""
        truncated = len(session.trials) < len(session.outcomes)
        record = make_session(
            session_id=session.session_id,
            agent={"source": "human", "kind": "human", "params_hash": "",
                   "meta": {"participant": session.participant,
                            "truncated": truncated}},
            task=session.task,
            actions=[tr["action"] for tr in session.trials],
            outcomes=[tr["outcome"] for tr in session.trials],
            seed=session.seed,
            corpus_tag=session.corpus_tag,
            iteration_index=session.iteration_index,
            response_times_ms=session.response_times_ms)
        # truncated sessions go one per file: datasets share a horizon
        if truncated:
            name = f"{session.corpus_tag}_partial_{session.session_id}.jsonl"
        else:
            name = f"{session.corpus_tag}.jsonl"
        path = os.path.join(self.config.data_dir, name)
        existing = []
        if not truncated and os.path.exists(path):
            existing = list(read_dataset(path).sessions)
        dataset = Dataset(sessions=tuple(existing + [record]),
                          provenance=session.corpus_tag,
                          meta={"source": "live"})
        tmp = path + ".tmp"
        write_dataset(dataset, tmp)
        os.replace(tmp, path)
        session.record_path = name
        if session.slot_index is not None:
            self.plan[session.slot_index].fulfilled += 1
        return truncated


class CreateBody(BaseModel):
    participant: dict = {}
    task: dict | None = None  # pilot mode only


class ChoiceBody(BaseModel):
    action: int
    trial: int | None = None  # idempotency key; defaults to the cursor


def make_app(config: ServiceConfig, plan: list | None = None) -> FastAPI:
    store = SessionStore(config, plan)
    app = FastAPI(title="coin game session service")
    app.state.store = store

    @app.get("/health")
    def health():
        return {"status": "ok",
                "active_sessions": sum(
                    1 for s in store.sessions.values()
                    if s.status == "active")}

    @app.get("/instructions")
    def instructions():
        return {"text": INSTRUCTIONS.format(horizon=config.horizon),
                "points_per_correct": config.points_per_correct}

    @app.post("/sessions")
    def create_session(body: CreateBody):
        task = TaskParams.from_dict(body.task) if body.task else None
        session = store.create(task, body.participant)
        return {"session_id": session.session_id, "horizon": config.horizon}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return store.get(session_id).public_view()

    @app.post("/sessions/{session_id}/choice")
    def submit_choice(session_id: str, body: ChoiceBody):
        if body.action not in (0, 1):
            raise HTTPException(status_code=422,
                                detail="action must be 0 or 1")
        result, replayed = store.submit(session_id, body.action, body.trial)
        if replayed:
            # conflict, but the original result rides along for retries
            return JSONResponse(status_code=409, content=result)
        return result

    @app.post("/sessions/{session_id}/finalize")
    def finalize(session_id: str):
        return store.finalize(session_id)

    return app
