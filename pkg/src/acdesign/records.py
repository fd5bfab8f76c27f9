"""Session and dataset record types with line-delimited JSON persistence.

These types are the currency of the experiment loop: one SessionRecord
per played session, Datasets grouping sessions under a corpus tag, and
per-iteration records of the adversarial loop. They live in their own
module (re-exported by the loop orchestrator) so agent simulation can
produce datasets without importing the orchestrator.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .env_hmm import TaskParams

__all__ = [
    "Trial",
    "SessionRecord",
    "Dataset",
    "AcIterationRecord",
    "session_fingerprint",
    "dataset_fingerprint",
    "write_dataset",
    "read_dataset",
]


@dataclass(frozen=True)
class Trial:
    t: int  # 1-based trial index
    action: int
    outcome: int
    correct: int
    response_time_ms: float | None = None

    def __post_init__(self):
        if self.action not in (0, 1) or self.outcome not in (0, 1):
            raise ValueError("action and outcome must be 0 or 1")
        if self.correct != int(self.action == self.outcome):
            raise ValueError("correct flag must equal 1{action == outcome}")

    def to_dict(self) -> dict:
        doc = {"t": self.t, "action": self.action, "outcome": self.outcome,
               "correct": self.correct}
        if self.response_time_ms is not None:
            doc["response_time_ms"] = self.response_time_ms
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Trial":
        return cls(t=doc["t"], action=doc["action"], outcome=doc["outcome"],
                   correct=doc["correct"],
                   response_time_ms=doc.get("response_time_ms"))


@dataclass(frozen=True)
class SessionRecord:
    """One completed session: who played, on what task, and every trial."""

    session_id: str
    agent: dict  # descriptor: {"source": "human" | "synthetic", ...}
    task: TaskParams
    trials: tuple  # of Trial, indexed 1..T contiguously
    seed: int
    corpus_tag: str
    iteration_index: int

    def __post_init__(self):
        if not self.trials:
            raise ValueError("a session needs at least one trial")
        for i, trial in enumerate(self.trials, start=1):
            if trial.t != i:
                raise ValueError("trials must be indexed 1..T contiguously")

    @property
    def horizon(self) -> int:
        return len(self.trials)

    @property
    def actions(self) -> np.ndarray:
        return np.array([tr.action for tr in self.trials], dtype=np.int64)

    @property
    def outcomes(self) -> np.ndarray:
        return np.array([tr.outcome for tr in self.trials], dtype=np.int64)

    @property
    def accuracy(self) -> float:
        return float(np.mean([tr.correct for tr in self.trials]))

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "agent": self.agent,
            "task": self.task.to_dict(),
            "trials": [tr.to_dict() for tr in self.trials],
            "seed": self.seed,
            "corpus_tag": self.corpus_tag,
            "iteration_index": self.iteration_index,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionRecord":
        return cls(
            session_id=doc["session_id"],
            agent=doc["agent"],
            task=TaskParams.from_dict(doc["task"]),
            trials=tuple(Trial.from_dict(d) for d in doc["trials"]),
            seed=doc["seed"],
            corpus_tag=doc["corpus_tag"],
            iteration_index=doc["iteration_index"],
        )


def make_session(session_id: str, agent: dict, task: TaskParams,
                 actions, outcomes, seed: int, corpus_tag: str,
                 iteration_index: int,
                 response_times_ms=None) -> SessionRecord:
    """Build a record from parallel action/outcome arrays."""
    actions = np.asarray(actions, dtype=np.int64)
    outcomes = np.asarray(outcomes, dtype=np.int64)
    if actions.shape != outcomes.shape:
        raise ValueError("actions and outcomes must align")
    trials = tuple(
        Trial(t=i + 1, action=int(a), outcome=int(o),
              correct=int(a == o),
              response_time_ms=(None if response_times_ms is None
                                else float(response_times_ms[i])))
        for i, (a, o) in enumerate(zip(actions, outcomes)))
    return SessionRecord(session_id=session_id, agent=agent, task=task,
                         trials=trials, seed=seed, corpus_tag=corpus_tag,
                         iteration_index=iteration_index)


@dataclass(frozen=True)
class Dataset:
    """A named collection of sessions sharing one horizon."""

    sessions: tuple  # of SessionRecord
    provenance: str  # corpus tag, e.g. the seed corpus or an iteration tag
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        horizons = {s.horizon for s in self.sessions}
        if len(horizons) > 1:
            raise ValueError("all sessions in a dataset must share one horizon")

    def __len__(self) -> int:
        return len(self.sessions)

    @property
    def horizon(self) -> int:
        if not self.sessions:
            raise ValueError("empty dataset has no horizon")
        return self.sessions[0].horizon

    @property
    def mean_accuracy(self) -> float:
        if not self.sessions:
            raise ValueError("empty dataset has no accuracy")
        return float(np.mean([s.accuracy for s in self.sessions]))

    def merged_with(self, *others: "Dataset", provenance: str,
                    meta: dict | None = None) -> "Dataset":
        sessions = list(self.sessions)
        for other in others:
            sessions.extend(other.sessions)
        return Dataset(sessions=tuple(sessions), provenance=provenance,
                       meta=meta or {})


@dataclass(frozen=True)
class AcIterationRecord:
    """Everything one adversarial iteration produced."""

    iteration: int
    selected_task: TaskParams
    predicted_regret: dict  # RegretEstimate.to_dict() of the pre-collection model
    observed_regret: float
    postdicted_regret: dict  # RegretEstimate.to_dict() of the refit model
    min_sym_distance: float
    model_checkpoint_ref: str
    dataset_ref: str

    def __post_init__(self):
        if self.min_sym_distance < 0:
            raise ValueError("min_sym_distance must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "selected_task": self.selected_task.to_dict(),
            "predicted_regret": self.predicted_regret,
            "observed_regret": self.observed_regret,
            "postdicted_regret": self.postdicted_regret,
            "min_sym_distance": self.min_sym_distance,
            "model_checkpoint_ref": self.model_checkpoint_ref,
            "dataset_ref": self.dataset_ref,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AcIterationRecord":
        return cls(
            iteration=doc["iteration"],
            selected_task=TaskParams.from_dict(doc["selected_task"]),
            predicted_regret=doc["predicted_regret"],
            observed_regret=doc["observed_regret"],
            postdicted_regret=doc["postdicted_regret"],
            min_sym_distance=doc["min_sym_distance"],
            model_checkpoint_ref=doc["model_checkpoint_ref"],
            dataset_ref=doc["dataset_ref"],
        )


def session_fingerprint(session: SessionRecord) -> str:
    blob = json.dumps(session.to_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def dataset_fingerprint(dataset: Dataset) -> str:
    """Order-sensitive content hash of every session in the dataset."""
    digest = hashlib.sha256()
    digest.update(dataset.provenance.encode())
    for session in dataset.sessions:
        digest.update(session_fingerprint(session).encode())
    return digest.hexdigest()


def write_dataset(dataset: Dataset, path) -> None:
    """Line-delimited JSON: a header line, then one session per line."""
    with open(path, "w") as fh:
        header = {"provenance": dataset.provenance, "meta": dataset.meta,
                  "n_sessions": len(dataset.sessions)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for session in dataset.sessions:
            fh.write(json.dumps(session.to_dict(), sort_keys=True) + "\n")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = [line for line in fh if line.strip()]
    header = json.loads(lines[0])
    sessions = tuple(SessionRecord.from_dict(json.loads(line))
                     for line in lines[1:])
    if len(sessions) != header.get("n_sessions", len(sessions)):
        raise ValueError("session count does not match dataset header")
    return Dataset(sessions=sessions, provenance=header["provenance"],
                   meta=header.get("meta", {}))
