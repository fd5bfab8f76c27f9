"""Experiment loop: seed phase, adversarial iterations, random baselines.

The loop alternates between fitting a policy network to the cumulative
corpus and selecting the next environment where that policy falls
furthest behind the Bayesian reference. Data collection is abstracted
behind a participant source, so the same loop drives synthetic
populations and live sessions. All randomness derives from one root
seed, and state persists as JSON after every completed step, so a
killed loop resumes bit for bit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

from . import seeds
from .env_hmm import TaskParams, sym_distance
from .gru_policy import (FitConfig, GruWeights, fit, init_weights,
                         load_checkpoint, save_checkpoint)
from .ideal_learner import FilterConfig, il_accuracy
from .records import (AcIterationRecord, Dataset, SessionRecord, Trial,
                      dataset_fingerprint, read_dataset, session_fingerprint,
                      write_dataset)
from .regret_search import SearchConfig, estimate_regret, maximize_regret
from .synthetic_agents import PopulationSpec, default_population, simulate_sessions

__all__ = [
    "SessionRecord",
    "Trial",
    "Dataset",
    "AcIterationRecord",
    "ParticipantSourceError",
    "SyntheticSource",
    "LoopConfig",
    "LoopState",
    "init_loop",
    "load_loop",
    "run_seed_phase",
    "run_ac_iteration",
    "run_loop",
    "build_random_corpora",
    "full_scale",
    "replication_plan",
    "convergence_report",
]


class ParticipantSourceError(RuntimeError):
    """The participant source could not deliver the requested sessions."""


def _corpus_fingerprint(sessions) -> str:
    """Order-sensitive hash of a session chain; keys the fit cache."""
    digest = hashlib.sha256()
    for s in sessions:
        digest.update(session_fingerprint(s).encode())
    return digest.hexdigest()


class SyntheticSource:
    """Participant source backed by a synthetic agent population."""

    def __init__(self, population: PopulationSpec, horizon: int):
        self.population = population
        self.horizon = horizon

    def collect(self, task: TaskParams, n_sessions: int, seed: int,
                corpus_tag: str, iteration_index: int) -> Dataset:
        return simulate_sessions(self.population, task, n_sessions,
                                 self.horizon, seed, corpus_tag=corpus_tag,
                                 iteration_index=iteration_index)


@dataclass(frozen=True)
class LoopConfig:
    """Experiment shape plus every inner hyperparameter, one document.

    Desk-scale defaults; the full replication shape uses 100 sessions
    per environment and ten random corpora (see `full_scale`).
    """

    horizon: int = 50
    seed_sessions: int = 30
    sessions_per_env: int = 30
    n_ac_iterations: int = 5
    n_random_envs: int = 8
    n_random_corpora: int = 5
    subset_size: int = 5
    root_seed: int = 0
    observed_rollouts: int = 5000  # reference-accuracy budget for observed regret
    convergence_gap: float = 0.02
    convergence_distance: float = 0.1
    hidden_dim: int = 7
    warm_start: bool = True  # refits start from the previous prefix model
    fit: FitConfig = field(default_factory=FitConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    population: PopulationSpec = field(default_factory=default_population)

    def __post_init__(self):
        for name in ("horizon", "seed_sessions", "sessions_per_env",
                     "n_ac_iterations", "n_random_envs", "n_random_corpora",
                     "subset_size", "observed_rollouts", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.subset_size > self.n_random_envs:
            raise ValueError("subset_size cannot exceed n_random_envs")
        if self.n_random_corpora > math.comb(self.n_random_envs,
                                             self.subset_size):
            raise ValueError("not enough distinct subsets available")

    def to_dict(self) -> dict:
        doc = {name: getattr(self, name) for name in (
            "horizon", "seed_sessions", "sessions_per_env", "n_ac_iterations",
            "n_random_envs", "n_random_corpora", "subset_size", "root_seed",
            "observed_rollouts", "convergence_gap", "convergence_distance",
            "hidden_dim", "warm_start")}
        doc["fit"] = dataclasses.asdict(self.fit)
        doc["search"] = dataclasses.asdict(self.search)
        doc["population"] = self.population.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "LoopConfig":
        doc = dict(doc)
        fit_doc = doc.pop("fit", None)
        search_doc = doc.pop("search", None)
        pop_doc = doc.pop("population", None)
        return cls(
            fit=FitConfig(**fit_doc) if fit_doc else FitConfig(),
            search=SearchConfig(**search_doc) if search_doc else SearchConfig(),
            population=(PopulationSpec.from_dict(pop_doc) if pop_doc
                        else default_population()),
            **doc)


def full_scale(config: LoopConfig | None = None) -> LoopConfig:
    """The full replication shape: 100 sessions/environment, K=10."""
    base = config or LoopConfig()
    return dataclasses.replace(base, seed_sessions=100, sessions_per_env=100,
                               n_random_corpora=10)


# reference-learner configuration shared by predicted, observed, and
# postdicted regret; recorded by hash in the loop state
IL_CONFIG = FilterConfig()


def _il_config_hash() -> str:
    blob = json.dumps(dataclasses.asdict(IL_CONFIG), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class LoopState:
    """On-disk loop state: datasets, model checkpoints, iteration records."""

    def __init__(self, config: LoopConfig, out_dir: str):
        self.config = config
        self.out_dir = out_dir
        self.datasets: list[dict] = []  # {tag, path, fingerprint, iteration_index, task}
        self.models: list[dict] = []  # {ref, corpus_fingerprint, fit_seed, n_sessions}
        self.records: list[AcIterationRecord] = []
        self.random: dict = {}
        self._cache: dict[str, Dataset] = {}

    # -- paths ---------------------------------------------------------

    @property
    def state_path(self) -> str:
        return os.path.join(self.out_dir, "state.json")

    def _ensure_dirs(self):
        for sub in ("datasets", "models", "reports"):
            os.makedirs(os.path.join(self.out_dir, sub), exist_ok=True)

    # -- dataset and model access ---------------------------------------

    def dataset(self, tag: str) -> Dataset:
        if tag not in self._cache:
            entry = next((d for d in self.datasets if d["tag"] == tag), None)
            if entry is None:
                raise KeyError(f"no dataset tagged {tag!r}")
            self._cache[tag] = read_dataset(os.path.join(self.out_dir,
                                                         entry["path"]))
        return self._cache[tag]

    def add_dataset(self, dataset: Dataset, tag: str,
                    iteration_index: int, task: TaskParams | None) -> dict:
        path = os.path.join("datasets", f"{tag}.jsonl")
        write_dataset(dataset, os.path.join(self.out_dir, path))
        entry = {"tag": tag, "path": path,
                 "fingerprint": dataset_fingerprint(dataset),
                 "iteration_index": iteration_index,
                 "task": task.to_dict() if task is not None else None}
        self.datasets.append(entry)
        self._cache[tag] = dataset
        return entry

    def model_weights(self, ref: str) -> GruWeights:
        weights, _ = load_checkpoint(os.path.join(self.out_dir, ref))
        return weights

    def current_weights(self) -> GruWeights:
        if not self.models:
            raise ValueError("no fitted model yet; run the seed phase first")
        return self.model_weights(self.models[-1]["ref"])

    def ac_tags(self) -> list[str]:
        # insertion order is D1, AC1, AC2, ...; random corpora carry -1
        return [d["tag"] for d in self.datasets if d["iteration_index"] >= 0]

    def cumulative_sessions(self) -> list:
        sessions = []
        for tag in self.ac_tags():
            sessions.extend(self.dataset(tag).sessions)
        return sessions

    def selected_tasks(self) -> list[TaskParams]:
        return [r.selected_task for r in self.records]

    def fit_model(self, sessions, name: str, prefix_len: int,
                  fingerprint: str, init_ref: str | None = None) -> str:
        """Fit (or reuse) the prefix model for a corpus fingerprint.

        Equal fingerprints imply equal session chains, so the warm-start
        source (the chain's previous prefix model) is equal too and the
        cache stays keyed on (fingerprint, fit seed) alone.
        """
        fit_seed = seeds.derive(self.config.root_seed, 200, prefix_len)
        for entry in self.models:
            if (entry["corpus_fingerprint"] == fingerprint
                    and entry["fit_seed"] == fit_seed):
                return entry["ref"]
        config = dataclasses.replace(self.config.fit, seed=fit_seed)
        if init_ref is not None and self.config.warm_start:
            init = self.model_weights(init_ref)
        else:
            init = init_weights(fit_seed, hidden_dim=self.config.hidden_dim)
        weights = fit(init, sessions, config)
        ref = os.path.join("models", f"{name}.json")
        save_checkpoint(weights, os.path.join(self.out_dir, ref),
                        meta={"corpus_fingerprint": fingerprint,
                              "n_sessions": len(sessions),
                              "fit_seed": fit_seed})
        self.models.append({"ref": ref, "corpus_fingerprint": fingerprint,
                            "fit_seed": fit_seed,
                            "n_sessions": len(sessions)})
        return ref

    # -- persistence -----------------------------------------------------

    def save(self):
        doc = {
            "config": self.config.to_dict(),
            "il_config": dataclasses.asdict(IL_CONFIG),
            "il_config_hash": _il_config_hash(),
            "datasets": self.datasets,
            "models": self.models,
            "records": [r.to_dict() for r in self.records],
            "random": self.random,
        }
        tmp = self.state_path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(doc, fh, indent=1)
        os.replace(tmp, self.state_path)

    @classmethod
    def load(cls, out_dir: str) -> "LoopState":
        with open(os.path.join(out_dir, "state.json")) as fh:
            doc = json.load(fh)
        state = cls(LoopConfig.from_dict(doc["config"]), out_dir)
        state.datasets = doc["datasets"]
        state.models = doc["models"]
        state.records = [AcIterationRecord.from_dict(d)
                         for d in doc["records"]]
        state.random = doc.get("random", {})
        return state


def init_loop(config: LoopConfig, out_dir: str) -> LoopState:
    state = LoopState(config, out_dir)
    state._ensure_dirs()
    state.save()
    return state


def load_loop(out_dir: str) -> LoopState:
    return LoopState.load(out_dir)


def run_seed_phase(state: LoopState, source) -> Dataset:
    """Collect the shared first dataset and fit the first model.

    Every session draws its own emission level r uniformly and plays
    r1 = r2 = r, so observations are independent coin flips whose bias
    varies across sessions; switch probabilities are drawn and stored
    but have no observable effect.
    """
    config = state.config
    if any(d["tag"] == "D1" for d in state.datasets):
        raise ValueError("seed phase already completed for this loop")
    if config.seed_sessions < 1:
        raise ValueError("seed phase needs a positive session budget")
    root = config.root_seed
    sessions = []
    for i in range(config.seed_sessions):
        env_rng = seeds.rng_from(root, 0, 0, i)
        r = float(env_rng.uniform())
        p1, p2 = (float(v) for v in env_rng.uniform(size=2))
        task = TaskParams(p1, p2, r, r)
        batch = source.collect(task, 1, seeds.derive(root, 0, 1, i),
                               corpus_tag="D1", iteration_index=0)
        sessions.extend(batch.sessions)
    dataset = Dataset(sessions=tuple(sessions), provenance="D1",
                      meta={"root_seed": root})
    state.add_dataset(dataset, "D1", iteration_index=0, task=None)
    state.fit_model(list(dataset.sessions), "ac_prefix_1", prefix_len=1,
                    fingerprint=_corpus_fingerprint(dataset.sessions))
    state.save()
    return dataset


def run_ac_iteration(state: LoopState, source) -> AcIterationRecord:
    """One full adversarial turn of the loop.

    Select the environment maximizing the current model's regret, collect
    sessions there, measure the empirical gap to the reference learner,
    refit on the grown corpus, and re-estimate regret with the new model.
    Nothing is persisted until every step succeeds, so a failed
    collection leaves the loop state untouched.
    """
    config = state.config
    root = config.root_seed
    weights = state.current_weights()
    n = len(state.records) + 1

    search = dataclasses.replace(config.search, seed=seeds.derive(root, n, 0))
    report_path = os.path.join(state.out_dir, "reports", f"search_{n:02d}.json")
    task, predicted = maximize_regret(weights, search, horizon=config.horizon,
                                      report_path=report_path)

    dataset = source.collect(task, config.sessions_per_env,
                             seeds.derive(root, n, 1),
                             corpus_tag=f"AC{n}", iteration_index=n)
    if len(dataset) == 0:
        raise ParticipantSourceError("participant source returned no sessions")

    il_acc, _il_se = il_accuracy(task, config.horizon,
                                 config.observed_rollouts,
                                 seeds.derive(root, n, 2), config=IL_CONFIG)
    observed = float(il_acc - dataset.mean_accuracy)

    entry = state.add_dataset(dataset, f"AC{n}", iteration_index=n, task=task)
    corpus = state.cumulative_sessions()
    model_ref = state.fit_model(corpus, f"ac_prefix_{n + 1}",
                                prefix_len=n + 1,
                                fingerprint=_corpus_fingerprint(corpus),
                                init_ref=state.models[-1]["ref"])

    refit = state.model_weights(model_ref)
    postdicted = estimate_regret(refit, task, config.search.n_rollouts_final,
                                 seeds.derive(root, n, 4),
                                 horizon=config.horizon)

    prior = state.selected_tasks()
    min_dist = (min(sym_distance(task, p) for p in prior) if prior
                else math.inf)

    record = AcIterationRecord(
        iteration=n,
        selected_task=task,
        predicted_regret=predicted.to_dict(),
        observed_regret=observed,
        postdicted_regret=postdicted.to_dict(),
        min_sym_distance=float(min_dist),
        model_checkpoint_ref=model_ref,
        dataset_ref=entry["path"])
    state.records.append(record)
    state.save()
    return record


def run_loop(state: LoopState, source,
             n_iterations: int | None = None) -> list[AcIterationRecord]:
    """Seed phase if needed, then adversarial iterations up to the budget."""
    if not any(d["tag"] == "D1" for d in state.datasets):
        run_seed_phase(state, source)
    target = (state.config.n_ac_iterations if n_iterations is None
              else len(state.records) + n_iterations)
    out = []
    while len(state.records) < target:
        out.append(run_ac_iteration(state, source))
    return out


def _sample_subsets(n_envs: int, k: int, size: int, seed: int) -> list[list[int]]:
    """k distinct subsets of the given size, drawn uniformly in order."""
    rng = seeds.rng_from(seed)
    subsets, seen = [], set()
    while len(subsets) < k:
        draw = [int(v) for v in rng.choice(n_envs, size=size, replace=False)]
        key = frozenset(draw)
        if key in seen:
            continue
        seen.add(key)
        subsets.append(draw)
    return subsets


def replication_plan(config: LoopConfig) -> dict:
    """The corpus arithmetic of a full run, without collecting anything.

    Counts environments (the shared seed task family counts once) and
    fitted models (one per cumulative prefix, per corpus), and draws the
    distinct random subsets exactly as execution would.
    """
    subsets = _sample_subsets(config.n_random_envs, config.n_random_corpora,
                              config.subset_size,
                              seeds.derive(config.root_seed, 103))
    ac_models = 1 + config.n_ac_iterations
    per_corpus = 1 + config.subset_size
    return {
        "n_environments": 1 + config.n_ac_iterations + config.n_random_envs,
        "ac_prefix_models": ac_models,
        "models_per_random_corpus": per_corpus,
        "n_models": ac_models + config.n_random_corpora * per_corpus,
        "subsets": subsets,
        "sessions_per_environment": config.sessions_per_env,
        "seed_sessions": config.seed_sessions,
    }


def build_random_corpora(state: LoopState, source) -> list[dict]:
    """The uniform-sampling baseline: random environments, random corpora.

    Draws environments uniformly from the task cube, collects one dataset
    each, forms distinct subsets, and fits one model per cumulative
    prefix of each corpus (seed dataset first). Models are reused across
    corpora when a prefix resolves to the same corpus fingerprint.
    """
    config = state.config
    root = config.root_seed
    if not any(d["tag"] == "D1" for d in state.datasets):
        raise ValueError("random corpora need the seed dataset; run the seed phase")

    env_tags = []
    for j in range(config.n_random_envs):
        tag = f"R{j + 1}"
        if not any(d["tag"] == tag for d in state.datasets):
            env_rng = seeds.rng_from(root, 102, j)
            task = TaskParams(*(float(v) for v in env_rng.uniform(size=4)))
            dataset = source.collect(task, config.sessions_per_env,
                                     seeds.derive(root, 102, j, 1),
                                     corpus_tag=tag, iteration_index=-1)
            state.add_dataset(dataset, tag, iteration_index=-1, task=task)
        env_tags.append(tag)

    subsets = _sample_subsets(config.n_random_envs, config.n_random_corpora,
                              config.subset_size,
                              seeds.derive(root, 103))

    corpora = []
    d1 = state.dataset("D1")
    for k, subset in enumerate(subsets):
        sessions = list(d1.sessions)
        model_refs = [state.fit_model(sessions, "r_prefix_1", prefix_len=1,
                                      fingerprint=_corpus_fingerprint(sessions))]
        for step, env_idx in enumerate(subset, start=2):
            tag = env_tags[env_idx]
            sessions.extend(state.dataset(tag).sessions)
            ref = state.fit_model(
                sessions, f"r{k + 1}_prefix_{step}", prefix_len=step,
                fingerprint=_corpus_fingerprint(sessions),
                init_ref=model_refs[-1])
            model_refs.append(ref)
        corpora.append({"k": k + 1, "subset": subset,
                        "dataset_tags": [env_tags[i] for i in subset],
                        "model_refs": model_refs})
    state.random = {"env_tags": env_tags, "subsets": subsets,
                    "corpora": corpora}
    state.save()
    return corpora


def convergence_report(records, gap_threshold: float = 0.02,
                       distance_threshold: float = 0.1) -> dict:
    """Per-iteration regret table plus the convergence flag.

    Converged means the latest iteration's |predicted - postdicted| gap
    and its distance to previously selected tasks are both under their
    thresholds; a single record never flags (no trend yet).
    """
    if not records:
        raise ValueError("need at least one iteration record")
    rows = []
    for rec in records:
        pred = rec.predicted_regret["regret"]
        post = rec.postdicted_regret["regret"]
        rows.append({
            "iteration": rec.iteration,
            "predicted": pred,
            "observed": rec.observed_regret,
            "postdicted": post,
            "gap": abs(pred - post),
            "min_sym_distance": rec.min_sym_distance,
        })
    latest = rows[-1]
    converged = (len(rows) >= 2
                 and latest["gap"] < gap_threshold
                 and latest["min_sym_distance"] < distance_threshold)
    return {"rows": rows, "converged": converged,
            "gap_threshold": gap_threshold,
            "distance_threshold": distance_threshold}
