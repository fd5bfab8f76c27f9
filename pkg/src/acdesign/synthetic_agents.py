"""Synthetic behavioral agents and population-level session simulation.

Four agent families cover the strategy space the experiment loop needs to
distinguish: a win-stay/lose-shift reflex, an outcome-frequency matcher,
a bigram continuation learner, and a lapsed version of the ideal filter.
Each agent is a small stateful policy over (action, outcome) history;
`simulate_sessions` samples agents from a mixture population and plays
them against freshly sampled environments, producing a Dataset whose
records tag the generating agent for diagnostics only.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .env_hmm import TaskParams, sample_trajectory
from .ideal_learner import FilterConfig, il_init, il_predict, il_update
from .records import Dataset, make_session

__all__ = [
    "AgentSpec",
    "PopulationComponent",
    "PopulationSpec",
    "agent_act",
    "action_probability",
    "simulate_sessions",
    "default_population",
    "frequency_population",
]

AGENT_KINDS = ("win_stay_lose_shift", "recency_matcher", "bigram_q",
               "noisy_ideal")


def _require(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class AgentSpec:
    """One agent family plus its parameters.

    Parameter sets by kind:
      win_stay_lose_shift: stay (repeat prob after a hit),
                           shift (switch prob after a miss)
      recency_matcher:     recency (EWMA memory, in (0,1)),
                           temperature (softmax scale, > 0),
                           lag (optional integer >= 0: outcomes enter
                           the average this many trials late)
      bigram_q:            recency, temperature (as above, over bigrams)
      noisy_ideal:         n_particles (filter size), lapse (uniform
                           response probability, in [0,1])
    """

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind: {self.kind!r}")
        p = self.params
        if self.kind == "win_stay_lose_shift":
            _require(set(p) == {"stay", "shift"},
                     "win_stay_lose_shift takes stay and shift")
            _require(0.0 <= p["stay"] <= 1.0 and 0.0 <= p["shift"] <= 1.0,
                     "stay and shift must be probabilities")
        elif self.kind == "recency_matcher":
            _require(set(p) - {"lag"} == {"recency", "temperature"},
                     "recency_matcher takes recency, temperature, "
                     "and an optional lag")
            _require(0.0 < p["recency"] < 1.0,
                     "recency must be strictly inside (0, 1)")
            _require(p["temperature"] > 0.0, "temperature must be positive")
            lag = p.get("lag", 0)
            _require(int(lag) == lag and lag >= 0,
                     "lag must be a nonnegative integer")
        elif self.kind == "bigram_q":
            _require(set(p) == {"recency", "temperature"},
                     "bigram_q takes recency and temperature")
            _require(0.0 < p["recency"] < 1.0,
                     "recency must be strictly inside (0, 1)")
            _require(p["temperature"] > 0.0, "temperature must be positive")
        else:  # noisy_ideal
            _require(set(p) == {"n_particles", "lapse"},
                     "noisy_ideal takes n_particles and lapse")
            _require(int(p["n_particles"]) >= 1,
                     "n_particles must be at least 1")
            _require(0.0 <= p["lapse"] <= 1.0, "lapse must be in [0, 1]")

    def params_hash(self) -> str:
        blob = json.dumps({"kind": self.kind, "params": self.params},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def descriptor(self) -> dict:
        """Record-ready identity: kind and hash visible, raw params in meta."""
        return {"source": "synthetic", "kind": self.kind,
                "params_hash": self.params_hash(),
                "meta": {"ground_truth": dict(self.params)}}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, doc: dict) -> "AgentSpec":
        return cls(kind=doc["kind"], params=dict(doc["params"]))


def _sigmoid(x: float) -> float:
    # tanh form is stable for large |x|
    return 0.5 * (1.0 + math.tanh(0.5 * x))


class _WslsRuntime:
    def __init__(self, spec: AgentSpec, seed: int):
        self.stay = spec.params["stay"]
        self.shift = spec.params["shift"]
        self.prev_action = None
        self.prev_correct = None

    def prob(self) -> float:
        if self.prev_action is None:
            return 0.5
        if self.prev_correct:
            p_repeat = self.stay
        else:
            p_repeat = 1.0 - self.shift
        return p_repeat if self.prev_action == 1 else 1.0 - p_repeat

    def update(self, action: int, outcome: int):
        self.prev_action = action
        self.prev_correct = action == outcome


class _RecencyRuntime:
    def __init__(self, spec: AgentSpec, seed: int):
        self.lam = spec.params["recency"]
        self.tau = spec.params["temperature"]
        self.lag = int(spec.params.get("lag", 0))
        self.freq = 0.5
        self.pending: list[int] = []

    def prob(self) -> float:
        return _sigmoid((2.0 * self.freq - 1.0) / self.tau)

    def update(self, action: int, outcome: int):
        self.pending.append(outcome)
        if len(self.pending) > self.lag:
            o = self.pending.pop(0)
            self.freq = self.lam * self.freq + (1.0 - self.lam) * o


class _BigramRuntime:
    def __init__(self, spec: AgentSpec, seed: int):
        self.lam = spec.params["recency"]
        self.tau = spec.params["temperature"]
        self.q = np.zeros((2, 2))
        self.last = None

    def prob(self) -> float:
        if self.last is None:
            return 0.5
        gap = self.q[self.last, 1] - self.q[self.last, 0]
        return _sigmoid(gap / self.tau)

    def update(self, action: int, outcome: int):
        if self.last is not None:
            self.q *= self.lam
            self.q[self.last, outcome] += 1.0 - self.lam
        self.last = outcome


class _NoisyIdealRuntime:
    def __init__(self, spec: AgentSpec, seed: int):
        config = FilterConfig(n_particles=int(spec.params["n_particles"]))
        self.lapse = spec.params["lapse"]
        self.state = il_init(config.n_particles, config.prior_alpha, seed)

    def prob(self) -> float:
        p = il_predict(self.state)
        return self.lapse * 0.5 + (1.0 - self.lapse) * p

    def update(self, action: int, outcome: int):
        il_update(self.state, outcome)


_RUNTIMES = {
    "win_stay_lose_shift": _WslsRuntime,
    "recency_matcher": _RecencyRuntime,
    "bigram_q": _BigramRuntime,
    "noisy_ideal": _NoisyIdealRuntime,
}


def _runtime(spec: AgentSpec, seed: int):
    return _RUNTIMES[spec.kind](spec, seed)


def action_probability(spec: AgentSpec, actions, outcomes,
                       seed: int = 0) -> float:
    """P(next action = 1) after replaying the given history.

    The seed matters only for noisy_ideal, whose probability depends on
    its particle filter's internal randomness.
    """
    actions = np.asarray(actions, dtype=np.int64)
    outcomes = np.asarray(outcomes, dtype=np.int64)
    if actions.shape != outcomes.shape:
        raise ValueError("actions and outcomes must align")
    rt = _runtime(spec, seeds.derive(seed, 0))
    for a, o in zip(actions, outcomes):
        rt.update(int(a), int(o))
    return float(rt.prob())


def agent_act(spec: AgentSpec, actions, outcomes, seed: int = 0) -> int:
    """Sample the next action after replaying the given history."""
    p = action_probability(spec, actions, outcomes, seed)
    rng = seeds.rng_from(seed, 1)
    return int(rng.random() < p)


@dataclass(frozen=True)
class PopulationComponent:
    weight: float
    spec: AgentSpec
    jitter: dict = field(default_factory=dict)  # param -> (lo, hi)

    def __post_init__(self):
        _require(self.weight >= 0.0, "component weight must be nonnegative")
        for name, rng in self.jitter.items():
            _require(name in self.spec.params,
                     f"jitter names unknown parameter {name!r}")
            lo, hi = rng
            _require(lo <= hi, "jitter range must satisfy lo <= hi")

    def to_dict(self) -> dict:
        return {"weight": self.weight, "spec": self.spec.to_dict(),
                "jitter": {k: list(v) for k, v in self.jitter.items()}}

    @classmethod
    def from_dict(cls, doc: dict) -> "PopulationComponent":
        return cls(weight=doc["weight"],
                   spec=AgentSpec.from_dict(doc["spec"]),
                   jitter={k: tuple(v)
                           for k, v in doc.get("jitter", {}).items()})


@dataclass(frozen=True)
class PopulationSpec:
    """Mixture over agent specs with per-session parameter jitter."""

    components: tuple

    def __post_init__(self):
        _require(len(self.components) > 0, "population needs a component")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")

    def sample_agent(self, rng: np.random.Generator) -> AgentSpec:
        weights = np.array([c.weight for c in self.components])
        idx = int(rng.choice(len(self.components), p=weights))
        comp = self.components[idx]
        params = dict(comp.spec.params)
        for name, (lo, hi) in comp.jitter.items():
            params[name] = float(rng.uniform(lo, hi))
        return AgentSpec(kind=comp.spec.kind, params=params)

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, doc: dict) -> "PopulationSpec":
        return cls(components=tuple(PopulationComponent.from_dict(d)
                                    for d in doc["components"]))


def default_population() -> PopulationSpec:
    """Mixed population spanning first-order and second-order strategies.

    Frequency matchers dominate; they integrate outcomes with a one-trial
    lag, so pooled first-phase behavior tracks long-run bit frequency
    rather than the newest outcome. Bigram learners carry second-order
    (continuation) structure, a small reflex group spans hot-hand and
    alternation biases, and lapsed ideal observers anchor the
    near-normative end.
    """
    return PopulationSpec(components=(
        PopulationComponent(
            weight=0.30,
            spec=AgentSpec("recency_matcher",
                           {"recency": 0.93, "temperature": 0.275, "lag": 1}),
            jitter={"recency": (0.9, 0.97), "temperature": (0.2, 0.35)}),
        PopulationComponent(
            weight=0.35,
            spec=AgentSpec("bigram_q", {"recency": 0.92, "temperature": 0.14}),
            jitter={"recency": (0.88, 0.96), "temperature": (0.1, 0.18)}),
        PopulationComponent(
            weight=0.15,
            spec=AgentSpec("recency_matcher",
                           {"recency": 0.85, "temperature": 0.22, "lag": 1}),
            jitter={"recency": (0.8, 0.9), "temperature": (0.18, 0.28)}),
        PopulationComponent(
            weight=0.05,
            spec=AgentSpec("win_stay_lose_shift",
                           {"stay": 0.5, "shift": 0.5}),
            jitter={"stay": (0.35, 0.65), "shift": (0.35, 0.65)}),
        PopulationComponent(
            weight=0.15,
            spec=AgentSpec("noisy_ideal",
                           {"n_particles": 300, "lapse": 0.05}),
            jitter={"lapse": (0.0, 0.1)}),
    ))


def frequency_population(recency: float = 0.85,
                         temperature: float = 0.1) -> PopulationSpec:
    """Pure outcome-frequency matchers, jittered around the given center."""
    lo, hi = max(0.05, temperature * 0.5), temperature * 1.5
    return PopulationSpec(components=(
        PopulationComponent(
            weight=1.0,
            spec=AgentSpec("recency_matcher",
                           {"recency": recency, "temperature": temperature}),
            jitter={"recency": (max(0.6, recency - 0.1),
                                min(0.98, recency + 0.1)),
                    "temperature": (lo, hi)}),
    ))


def simulate_sessions(population: PopulationSpec, params: TaskParams,
                      n_sessions: int, horizon: int, seed: int,
                      corpus_tag: str = "synthetic",
                      iteration_index: int = -1) -> Dataset:
    """Play sampled agents against fresh environment draws.

    Per-session randomness is derived from the root seed alone, so the
    same call is reproducible bit for bit. The generating agent spec is
    stored on each record for diagnostics; fitting code only ever reads
    actions and outcomes.
    """
    if n_sessions < 1:
        raise ValueError("n_sessions must be at least 1")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    sessions = []
    for i in range(n_sessions):
        pick_rng = seeds.rng_from(seed, i, 0)
        agent = population.sample_agent(pick_rng)
        traj = sample_trajectory(params, horizon, seeds.derive(seed, i, 1))
        act_rng = seeds.rng_from(seed, i, 2)
        rt = _runtime(agent, seeds.derive(seed, i, 3))
        actions = np.empty(horizon, dtype=np.int64)
        for t in range(horizon):
            a = int(act_rng.random() < rt.prob())
            actions[t] = a
            rt.update(a, int(traj.observations[t]))
        sessions.append(make_session(
            session_id=f"{corpus_tag}-{seed}-{i:04d}",
            agent=agent.descriptor(),
            task=params,
            actions=actions,
            outcomes=traj.observations,
            seed=seeds.derive(seed, i, 1),
            corpus_tag=corpus_tag,
            iteration_index=iteration_index))
    return Dataset(sessions=tuple(sessions), provenance=corpus_tag,
                   meta={"population_seed": seed, "n_sessions": n_sessions})
