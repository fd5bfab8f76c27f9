"""Two-state hidden Markov environment family.

An environment is a two-state chain with switch probabilities (p1, p2),
Bernoulli emission rates (r1, r2) and a fixed initial state distribution mu.
The latent state s_t is in {1, 2}; the observation o_t is in {0, 1}. Agents
see observations only; states are retained in trajectories for diagnostics.

This module provides trajectory sampling, the exact sequence likelihood
(forward recursion), and the geometric descriptors used by the selection
loop and the analysis battery: stationary distribution, mixing time,
emission ambiguity, alternation rate, and symmetry-reduced distance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "TaskParams",
    "Trajectory",
    "ParameterError",
    "DegenerateChainError",
    "sample_trajectory",
    "sample_observation_batch",
    "stationary_distribution",
    "mixing_time",
    "ambiguity",
    "alternation_rate",
    "symmetry_orbit",
    "sym_distance",
    "log_likelihood",
]


class ParameterError(ValueError):
    """A probability field lies outside its domain."""


class DegenerateChainError(ValueError):
    """The chain has no unique stationary distribution (p1 = p2 = 0)."""


@dataclass(frozen=True)
class TaskParams:
    """One point of the task space.

    p1, p2 are the probabilities of switching out of states 1 and 2;
    r1, r2 are the probabilities of emitting 1 from states 1 and 2.
    mu is the initial state distribution, fixed to (0.5, 0.5) in every
    experiment configuration (overridable for unit tests only).
    """

    p1: float
    p2: float
    r1: float
    r2: float
    mu: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        for name in ("p1", "p2", "r1", "r2"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0) or math.isnan(v):
                raise ParameterError(f"{name}={v!r} outside [0, 1]")
        m0, m1 = self.mu
        if not (0.0 <= m0 <= 1.0 and 0.0 <= m1 <= 1.0):
            raise ParameterError(f"mu={self.mu!r} outside [0, 1]^2")
        if abs(m0 + m1 - 1.0) > 1e-12:
            raise ParameterError(f"mu={self.mu!r} does not sum to 1")
        object.__setattr__(self, "mu", (float(m0), float(m1)))

    @property
    def vector(self) -> np.ndarray:
        """(p1, p2, r1, r2) as a float array, the representation distances use."""
        return np.array([self.p1, self.p2, self.r1, self.r2], dtype=float)

    def to_dict(self) -> dict:
        return {"p1": self.p1, "p2": self.p2, "r1": self.r1, "r2": self.r2,
                "mu": [self.mu[0], self.mu[1]]}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskParams":
        mu = d.get("mu", [0.5, 0.5])
        return cls(p1=float(d["p1"]), p2=float(d["p2"]),
                   r1=float(d["r1"]), r2=float(d["r2"]),
                   mu=(float(mu[0]), float(mu[1])))


@dataclass(frozen=True)
class Trajectory:
    """One sampled state/observation path.

    states holds values in {1, 2} and is diagnostic only; agents are never
    shown it. observations holds values in {0, 1}.
    """

    states: np.ndarray
    observations: np.ndarray
    seed: int

    def __post_init__(self):
        if len(self.states) != len(self.observations) or len(self.states) == 0:
            raise ValueError("states and observations must share a positive length")
        if not np.isin(self.states, (1, 2)).all():
            raise ValueError("states must take values in {1, 2}")
        if not np.isin(self.observations, (0, 1)).all():
            raise ValueError("observations must take values in {0, 1}")

    @property
    def horizon(self) -> int:
        return len(self.observations)


def _sample_batch(p1, p2, r1, r2, mu1, horizon: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample `n` trajectories at once; parameters broadcast over rows.

    Returns (states, observations) of shape (n, horizon); states use 0-based
    indices internally (0 = state 1, 1 = state 2). Draw order is fixed
    (initial uniforms, then transition uniforms, then emission uniforms) so
    results are a pure function of the generator state.
    """
    p1 = np.asarray(p1, dtype=float)
    n = p1.shape[0]
    p2 = np.broadcast_to(np.asarray(p2, dtype=float), (n,))
    r1 = np.broadcast_to(np.asarray(r1, dtype=float), (n,))
    r2 = np.broadcast_to(np.asarray(r2, dtype=float), (n,))
    mu1 = np.broadcast_to(np.asarray(mu1, dtype=float), (n,))

    u0 = rng.random(n)
    u_trans = rng.random((n, horizon - 1)) if horizon > 1 else np.empty((n, 0))
    u_emit = rng.random((n, horizon))

    states = np.empty((n, horizon), dtype=np.uint8)
    s = (u0 >= mu1).astype(np.uint8)  # P(state index 0) = mu[0]
    states[:, 0] = s
    for t in range(1, horizon):
        p_switch = np.where(s == 0, p1, p2)
        s = np.where(u_trans[:, t - 1] < p_switch, 1 - s, s).astype(np.uint8)
        states[:, t] = s
    r = np.where(states == 0, r1[:, None], r2[:, None])
    observations = (u_emit < r).astype(np.uint8)
    return states, observations


def sample_trajectory(params: TaskParams, horizon: int, seed: int) -> Trajectory:
    """Sample one trajectory; identical inputs give bit-identical output."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    rng = np.random.default_rng(seed)
    states, obs = _sample_batch(
        np.array([params.p1]), params.p2, params.r1, params.r2,
        params.mu[0], horizon, rng)
    return Trajectory(states=states[0] + 1, observations=obs[0], seed=int(seed))


def sample_observation_batch(params: TaskParams, horizon: int, n: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Observations of `n` fresh trajectories, shape (n, horizon)."""
    _, obs = _sample_batch(np.full(n, params.p1), params.p2, params.r1,
                           params.r2, params.mu[0], horizon, rng)
    return obs


def stationary_distribution(params: TaskParams) -> tuple[float, float]:
    """Stationary law of the latent chain, (pi_1, pi_2)."""
    denom = params.p1 + params.p2
    if denom == 0.0:
        raise DegenerateChainError("p1 = p2 = 0 has no unique stationary distribution")
    return (params.p2 / denom, params.p1 / denom)


def mixing_time(params: TaskParams) -> float:
    """Relaxation scale -1/ln|lam| of the second transition eigenvalue lam = 1-p1-p2.

    0 when lam = 0 (one-step mixing), +inf when |lam| = 1 (frozen or
    perfectly alternating chain).
    """
    lam = 1.0 - params.p1 - params.p2
    if lam == 0.0:
        return 0.0
    if abs(lam) == 1.0:
        return math.inf
    return -1.0 / math.log(abs(lam))


def ambiguity(params: TaskParams) -> float:
    """1 - |r1 - r2|: how similar the two states look through emissions."""
    return 1.0 - abs(params.r1 - params.r2)


def alternation_rate(params: TaskParams) -> float:
    """P(o_{t+1} != o_t) for the stationary observation process.

    Falls back to mu as the state law when p1 = p2 = 0 (frozen chain).
    """
    try:
        pi = stationary_distribution(params)
    except DegenerateChainError:
        pi = params.mu
    r = (params.r1, params.r2)
    rate = 0.0
    for s in range(2):
        p_switch = (params.p1, params.p2)[s]
        for s2 in range(2):
            p_trans = p_switch if s2 != s else 1.0 - p_switch
            flip = r[s] * (1.0 - r[s2]) + (1.0 - r[s]) * r[s2]
            rate += pi[s] * p_trans * flip
    return rate


def _state_swap(m: TaskParams) -> TaskParams:
    # Relabeling the latent states also swaps mu so the law is preserved.
    return TaskParams(p1=m.p2, p2=m.p1, r1=m.r2, r2=m.r1, mu=(m.mu[1], m.mu[0]))


def _emission_flip(m: TaskParams) -> TaskParams:
    return TaskParams(p1=m.p1, p2=m.p2, r1=1.0 - m.r1, r2=1.0 - m.r2, mu=m.mu)


def symmetry_orbit(params: TaskParams) -> set[TaskParams]:
    """Orbit of `params` under the order-4 relabeling group.

    The group is generated by the state relabeling (p1<->p2, r1<->r2) and
    the joint emission flip (r_i -> 1-r_i); duplicates collapse, so the
    orbit size divides 4.
    """
    swap = _state_swap(params)
    return {params, swap, _emission_flip(params), _emission_flip(swap)}


def sym_distance(a: TaskParams, b: TaskParams) -> float:
    """Euclidean distance in (p1, p2, r1, r2), minimized over b's orbit.

    Symmetric in its arguments, and zero exactly when b lies in a's orbit.
    """
    va = a.vector
    return min(float(np.linalg.norm(va - g.vector)) for g in symmetry_orbit(b))


def log_likelihood(params: TaskParams, observations) -> float:
    """Exact log P(o_1..o_T) by the scaled forward recursion over 2 states.

    Returns -inf (logged as a warning) when the sequence has probability
    zero under the model.
    """
    obs = np.asarray(observations, dtype=np.int64)
    if obs.ndim != 1 or obs.size == 0:
        raise ValueError("observations must be a nonempty 1-d binary sequence")
    emit1 = np.array([params.r1, params.r2])
    trans = np.array([[1.0 - params.p1, params.p1],
                      [params.p2, 1.0 - params.p2]])
    f = np.array(params.mu, dtype=float)  # filtered weight of each state
    total = 0.0
    for o in obs:
        e = emit1 if o == 1 else 1.0 - emit1
        joint = f * e
        step = joint.sum()
        if step <= 0.0:
            logger.warning("zero-probability observation sequence under %s", params)
            return -math.inf
        total += math.log(step)
        f = (joint / step) @ trans
    return total
