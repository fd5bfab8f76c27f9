"""Bayesian reference policy: online filtering over the two-state HMM family.

The filter knows the number of states and the initial distribution
mu = (0.5, 0.5) but not the switch or emission parameters. Each particle
carries a sampled latent-state path; conditional on that path the four
unknown parameters have independent Beta posteriors, summarized by
pseudo-counts (Rao-Blackwellization), so particles are O(1) memory.

The update uses the optimal (observation-conditional) state proposal with
the matching weight multiplier, and systematic resampling when the
effective sample size drops below a configurable fraction of N. The prior
is symmetric Beta(alpha, alpha) on each parameter with alpha < 1 by
default, favoring near-deterministic parameter values.

Two interchangeable execution engines share one algorithm and one random
stream layout (one (B, N) uniform block per step for state proposals, one
(B,) block for resampling): a vectorized numpy reference and a fused
per-row kernel that the simulation-heavy search paths rely on. They agree
up to floating-point reduction order.

`exact_predictive` is an independent brute-force oracle for the same
posterior predictive: a dense parameter grid with Beta prior mass per cell
and an exact forward recursion per grid point. The filter and the oracle
share nothing but the elementary HMM formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .env_hmm import TaskParams, sample_observation_batch

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAS_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        return deco if not (args and callable(args[0])) else args[0]


__all__ = [
    "FilterConfig",
    "FilterState",
    "Particle",
    "BatchFilter",
    "ResourceLimitError",
    "il_init",
    "il_predict",
    "il_update",
    "il_act",
    "il_accuracy",
    "IlPolicy",
    "exact_predictive",
    "exact_predictive_sequence",
]

_MU1 = 0.5  # P(initial state = state 2); hard-wired, matching the task family


class ResourceLimitError(ValueError):
    """A brute-force budget guard was exceeded."""


@dataclass(frozen=True)
class FilterConfig:
    """Filter hyperparameters, normally read from the experiment config."""

    n_particles: int = 1000
    prior_alpha: float = 0.25
    ess_fraction: float = 0.5  # resample when ESS < ess_fraction * N

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if self.prior_alpha <= 0:
            raise ValueError("prior_alpha must be > 0")
        if not 0.0 <= self.ess_fraction <= 1.0:
            raise ValueError("ess_fraction must lie in [0, 1]")


@dataclass
class Particle:
    """Read-only view of one particle, for diagnostics and tests."""

    current_state: int  # in {1, 2}
    stay_switch_counts: tuple  # ((stay_1, switch_1), (stay_2, switch_2))
    emission_counts: tuple  # ((ones_1, zeros_1), (ones_2, zeros_2))
    log_weight: float


# -- fused per-row kernels -----------------------------------------------------
# Count layout: sw = switch pseudo-counts per origin state, tt = total
# transition pseudo-counts per origin state (stay = tt - sw); on = emitted-one
# pseudo-counts per state, te = total emission pseudo-counts (zero = te - on).


@njit(cache=True)
def _kernel_update(state, sw0, tt0, sw1, tt1, on0, te0, on1, te1, w,
                   obs, u_prop, u_res, first_step, ess_threshold, pred_out):
    n_rows, n = state.shape
    nf = 0.0 if first_step else 1.0
    for b in range(n_rows):
        of = float(obs[b])
        w_sum = 0.0
        next_acc = 0.0
        # Branch-free particle sweep (selects vectorize); the next-step
        # predictive accumulates here so no second pass over the counts
        # is needed: pred_out gets the pre-resampling weighted mixture.
        for i in range(n):
            sf = float(state[b, i])
            pn1 = (1.0 - sf) * (sw0[b, i] / tt0[b, i]) \
                + sf * (1.0 - sw1[b, i] / tt1[b, i])
            mr0 = on0[b, i] / te0[b, i]
            mr1 = on1[b, i] / te1[b, i]
            e0 = of * mr0 + (1.0 - of) * (1.0 - mr0)
            e1 = of * mr1 + (1.0 - of) * (1.0 - mr1)
            pred = (1.0 - pn1) * e0 + pn1 * e1
            wi = w[b, i] * pred
            w[b, i] = wi
            w_sum += wi
            g = 1.0 if u_prop[b, i] < pn1 * e1 / pred else 0.0
            on0[b, i] += (1.0 - g) * of
            te0[b, i] += 1.0 - g
            on1[b, i] += g * of
            te1[b, i] += g
            sw0[b, i] += (1.0 - sf) * g * nf
            tt0[b, i] += (1.0 - sf) * nf
            sw1[b, i] += sf * (1.0 - g) * nf
            tt1[b, i] += sf * nf
            state[b, i] = np.int8(g)
            pn1n = (1.0 - g) * (sw0[b, i] / tt0[b, i]) \
                + g * (1.0 - sw1[b, i] / tt1[b, i])
            mr0n = on0[b, i] / te0[b, i]
            mr1n = on1[b, i] / te1[b, i]
            next_acc += wi * ((1.0 - pn1n) * mr0n + pn1n * mr1n)
        pred_out[b] = next_acc / w_sum
        inv = 1.0 / w_sum
        sq = 0.0
        for i in range(n):
            wi = w[b, i] * inv
            w[b, i] = wi
            sq += wi * wi
        if 1.0 / sq < ess_threshold:
            _kernel_resample_row(state, sw0, tt0, sw1, tt1, on0, te0, on1, te1,
                                 w, b, u_res[b])


@njit(cache=True)
def _kernel_resample_row(state, sw0, tt0, sw1, tt1, on0, te0, on1, te1, w,
                         b, u):
    n = state.shape[1]
    idx = np.empty(n, np.int64)
    csum = w[b, 0]
    j = 0
    for k in range(n):
        pos = (k + u) / n
        while csum < pos and j < n - 1:
            j += 1
            csum += w[b, j]
        idx[k] = j
    s_new = np.empty(n, state.dtype)
    a0 = np.empty(n, np.float64)
    a1 = np.empty(n, np.float64)
    a2 = np.empty(n, np.float64)
    a3 = np.empty(n, np.float64)
    a4 = np.empty(n, np.float64)
    a5 = np.empty(n, np.float64)
    a6 = np.empty(n, np.float64)
    a7 = np.empty(n, np.float64)
    for k in range(n):
        j = idx[k]
        s_new[k] = state[b, j]
        a0[k] = sw0[b, j]
        a1[k] = tt0[b, j]
        a2[k] = sw1[b, j]
        a3[k] = tt1[b, j]
        a4[k] = on0[b, j]
        a5[k] = te0[b, j]
        a6[k] = on1[b, j]
        a7[k] = te1[b, j]
    uniform = 1.0 / n
    for k in range(n):
        state[b, k] = s_new[k]
        sw0[b, k] = a0[k]
        tt0[b, k] = a1[k]
        sw1[b, k] = a2[k]
        tt1[b, k] = a3[k]
        on0[b, k] = a4[k]
        te0[b, k] = a5[k]
        on1[b, k] = a6[k]
        te1[b, k] = a7[k]
        w[b, k] = uniform


class BatchFilter:
    """Rao-Blackwellized particle filter over B independent observation rows.

    All arrays have shape (B, N). Rows never interact; a single generator
    drives the whole batch with a fixed per-step draw layout, so results
    are a pure function of (shape, config, seed, engine).
    """

    def __init__(self, n_rows: int, config: FilterConfig, seed: int,
                 engine: str = "auto"):
        if engine == "auto":
            engine = "fused" if _HAS_NUMBA else "numpy"
        if engine not in ("fused", "numpy"):
            raise ValueError(f"unknown engine {engine!r}")
        if engine == "fused" and not _HAS_NUMBA:
            raise ValueError("fused engine requested but numba is unavailable")
        self.engine = engine
        self.config = config
        self.n_rows = n_rows
        self.rng = np.random.default_rng(seed)
        n, a = config.n_particles, config.prior_alpha
        shape = (n_rows, n)
        # Placeholder initial states drawn from mu; the first update replaces
        # them with draws from the exact conditional given the observation.
        self.state = (self.rng.random(shape) < _MU1).astype(np.int8)
        self.sw = [np.full(shape, a), np.full(shape, a)]  # switch counts
        self.tt = [np.full(shape, 2 * a), np.full(shape, 2 * a)]  # total trans
        self.on = [np.full(shape, a), np.full(shape, a)]  # emitted-one counts
        self.te = [np.full(shape, 2 * a), np.full(shape, 2 * a)]  # total emis
        self.w = np.full(shape, 1.0 / n)
        # Fresh-filter predictive is exactly 0.5: the symmetric prior gives
        # every emission parameter posterior mean 0.5 regardless of state.
        self._pred_cache = np.full(n_rows, 0.5)
        self.step = 0

    def _arrays(self):
        return (self.state, self.sw[0], self.tt[0], self.sw[1], self.tt[1],
                self.on[0], self.te[0], self.on[1], self.te[1], self.w)

    def ess(self) -> np.ndarray:
        return 1.0 / np.square(self.w).sum(axis=1)

    def normalized_weights(self) -> np.ndarray:
        return self.w.copy()

    # -- filtering ----------------------------------------------------------

    def _next_state_prior(self) -> np.ndarray:
        """Per-particle P(next latent = state 2 | path), shape (B, N).

        Before the first update the counts sit at the symmetric prior, so
        this evaluates to mu exactly; afterwards it is the Beta posterior
        mean of switching out of the current state.
        """
        return np.where(self.state == 0,
                        self.sw[0] / self.tt[0],
                        1.0 - self.sw[1] / self.tt[1])

    def predict(self) -> np.ndarray:
        """P(next observation = 1 | history) per row, shape (B,).

        The value is the weighted particle mixture computed at the end of
        the latest update (before any resampling reset the weights); a
        fresh filter returns exactly 0.5 by prior symmetry.
        """
        return self._pred_cache.copy()

    def update(self, obs) -> None:
        """Condition every row on its observed bit (shape (B,), values 0/1)."""
        o_arr = np.asarray(obs, dtype=np.int64).reshape(self.n_rows)
        u_prop = self.rng.random((self.n_rows, self.config.n_particles))
        u_res = self.rng.random(self.n_rows)
        threshold = self.config.ess_fraction * self.config.n_particles
        if self.engine == "fused":
            _kernel_update(*self._arrays(), o_arr, u_prop, u_res,
                           self.step == 0, threshold, self._pred_cache)
        else:
            self._update_numpy(o_arr, u_prop, u_res, threshold)
        self.step += 1

    def _update_numpy(self, o_arr, u_prop, u_res, threshold) -> None:
        o = o_arr.astype(float).reshape(self.n_rows, 1)
        pn1 = self._next_state_prior()
        mr0 = self.on[0] / self.te[0]
        mr1 = self.on[1] / self.te[1]
        e0 = o * mr0 + (1.0 - o) * (1.0 - mr0)  # P(o | next = state 1)
        e1 = o * mr1 + (1.0 - o) * (1.0 - mr1)
        pred = (1.0 - pn1) * e0 + pn1 * e1
        self.w *= pred

        # Optimal proposal: sample the new state from its exact conditional.
        new1 = u_prop < pn1 * e1 / pred
        new0 = ~new1
        ob = o.astype(bool)
        self.on[0] += new0 & ob
        self.te[0] += new0
        self.on[1] += new1 & ob
        self.te[1] += new1
        if self.step > 0:
            # No transition precedes the first state, so counts start at t=2.
            cur1 = self.state == 1
            self.sw[0] += ~cur1 & new1
            self.tt[0] += ~cur1
            self.sw[1] += cur1 & new0
            self.tt[1] += cur1
        self.state = new1.astype(np.int8)

        pn1n = np.where(new1, 1.0 - self.sw[1] / self.tt[1],
                        self.sw[0] / self.tt[0])
        next_pred = (1.0 - pn1n) * (self.on[0] / self.te[0]) \
            + pn1n * (self.on[1] / self.te[1])
        w_sum = self.w.sum(axis=1)
        self._pred_cache = (self.w * next_pred).sum(axis=1) / w_sum

        self.w /= w_sum[:, None]
        ess = 1.0 / np.square(self.w).sum(axis=1)
        need = ess < threshold
        if np.any(need):
            self._resample_numpy(np.flatnonzero(need), u_res)

    def _resample_numpy(self, rows: np.ndarray, u_all: np.ndarray) -> None:
        n = self.config.n_particles
        c = np.cumsum(self.w[rows], axis=1)
        c[:, -1] = 1.0
        pos = (np.arange(n) + u_all[rows, None]) / n
        # One flat searchsorted over all rows: shift each row into its own
        # disjoint interval so the concatenation stays sorted.
        offs = 2.0 * np.arange(len(rows))[:, None]
        flat = np.searchsorted((c + offs).ravel(), (pos + offs).ravel())
        idx = np.minimum(flat.reshape(len(rows), n)
                         - np.arange(len(rows))[:, None] * n, n - 1)
        for arr in (self.state, *self.sw, *self.tt, *self.on, *self.te):
            arr[rows] = np.take_along_axis(arr[rows], idx, axis=1)
        self.w[rows] = 1.0 / n


class FilterState:
    """One filter instance (a single observation stream)."""

    def __init__(self, config: FilterConfig, seed: int, engine: str = "auto"):
        self.prior_alpha = config.prior_alpha
        self.rng_seed = int(seed)
        self._f = BatchFilter(1, config, seed, engine=engine)

    @property
    def step(self) -> int:
        return self._f.step

    @property
    def n_particles(self) -> int:
        return self._f.config.n_particles

    def ess(self) -> float:
        return float(self._f.ess()[0])

    def normalized_weights(self) -> np.ndarray:
        return self._f.normalized_weights()[0]

    def particle(self, i: int) -> Particle:
        f = self._f
        return Particle(
            current_state=int(f.state[0, i]) + 1,
            stay_switch_counts=(
                (float(f.tt[0][0, i] - f.sw[0][0, i]), float(f.sw[0][0, i])),
                (float(f.tt[1][0, i] - f.sw[1][0, i]), float(f.sw[1][0, i])),
            ),
            emission_counts=(
                (float(f.on[0][0, i]), float(f.te[0][0, i] - f.on[0][0, i])),
                (float(f.on[1][0, i]), float(f.te[1][0, i] - f.on[1][0, i])),
            ),
            log_weight=float(np.log(f.w[0, i])),
        )


def il_init(n_particles: int, prior_alpha: float, seed: int,
            ess_fraction: float = 0.5, engine: str = "auto") -> FilterState:
    """Fresh filter: symmetric Beta(alpha, alpha) on every parameter."""
    cfg = FilterConfig(n_particles=n_particles, prior_alpha=prior_alpha,
                       ess_fraction=ess_fraction)
    return FilterState(cfg, seed, engine=engine)


def il_predict(state: FilterState) -> float:
    """P(next observation = 1 | history seen so far), strictly inside (0, 1)."""
    return float(state._f.predict()[0])


def il_update(state: FilterState, observation: int) -> FilterState:
    """Condition on one observed bit; mutates and returns the state."""
    if observation not in (0, 1):
        raise ValueError(f"observation must be 0 or 1, got {observation!r}")
    state._f.update(np.array([observation], dtype=np.int64))
    return state


def il_act(state: FilterState, seed: int) -> int:
    """Sample an action from Bernoulli(il_predict(state))."""
    return int(np.random.default_rng(seed).random() < il_predict(state))


class IlPolicy:
    """Rollout adapter: plays whole trial batches with one filter per row."""

    def __init__(self, config: FilterConfig | None = None, seed: int = 0,
                 engine: str = "auto"):
        self.config = config or FilterConfig()
        self.seed = int(seed)
        self.engine = engine

    def start(self, n_rows: int) -> BatchFilter:
        return BatchFilter(n_rows, self.config, self.seed, engine=self.engine)

    def step(self, filt: BatchFilter, prev_actions, prev_outcomes) -> np.ndarray:
        """Consume the previous outcomes (if any) and return P(a_t = 1)."""
        if prev_outcomes is not None:
            filt.update(prev_outcomes)
        return filt.predict()


def il_accuracy(params: TaskParams, horizon: int, n_rollouts: int, seed: int,
                config: FilterConfig | None = None,
                engine: str = "auto") -> tuple[float, float]:
    """Monte-Carlo mean prediction accuracy of the filter on `params`.

    Each rollout samples a fresh trajectory, runs the filter online with
    sampled (probability-matching) actions, and scores the fraction of
    correct predictions. Returns (mean, standard error) across rollouts.
    """
    if n_rollouts < 2:
        raise ValueError("n_rollouts must be >= 2")
    config = config or FilterConfig()
    rng_env = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    rng_act = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    filt_seed = int(np.random.SeedSequence(seed, spawn_key=(2,)).generate_state(1)[0])

    obs = sample_observation_batch(params, horizon, n_rollouts, rng_env)
    filt = BatchFilter(n_rollouts, config, filt_seed, engine=engine)
    correct = np.zeros(n_rollouts)
    for t in range(horizon):
        p = filt.predict()
        a = rng_act.random(n_rollouts) < p
        correct += a == (obs[:, t] == 1)
        filt.update(obs[:, t])
    acc = correct / horizon
    return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(n_rollouts))


# -- exact discretized-Bayes oracle ------------------------------------------


def _grid_axis(resolution: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Cell midpoints and exact Beta(alpha, alpha) cell masses on [0, 1]."""
    edges = np.linspace(0.0, 1.0, resolution + 1)
    cdf = betainc(alpha, alpha, edges)
    masses = np.diff(cdf)
    mids = (edges[:-1] + edges[1:]) / 2.0
    return mids, masses


def _oracle_predictives(observations, grid_resolution: int,
                        prior_alpha: float) -> np.ndarray:
    """One-step-ahead P(o_t = 1 | o_1..t-1) for t = 1 .. T+1.

    Entry t (0-based) is the predictive before consuming observation t; the
    final entry is the next-bit predictive after the whole sequence. Exact
    under the discretized prior: every grid point runs the forward
    recursion, and predictives mix with per-point posterior mass.
    """
    obs = np.asarray(observations, dtype=np.int64)
    if grid_resolution > 51:
        raise ResourceLimitError("grid_resolution > 51 exceeds the oracle budget")
    if obs.size > 60:
        raise ResourceLimitError("oracle histories are capped at 60 observations")

    mids, masses = _grid_axis(grid_resolution, prior_alpha)
    g = grid_resolution
    idx = np.indices((g, g, g, g)).reshape(4, -1)
    p1, p2, r1, r2 = (mids[idx[k]] for k in range(4))
    log_prior = sum(np.log(masses[idx[k]]) for k in range(4))

    f0 = np.full(p1.shape, 1.0 - _MU1)  # filtered P(state 1) per grid point
    f1 = np.full(p1.shape, _MU1)
    log_like = np.zeros(p1.shape)
    out = np.empty(obs.size + 1)
    for t in range(obs.size + 1):
        log_post = log_prior + log_like
        log_post -= log_post.max()
        w = np.exp(log_post)
        pred1 = f0 * r1 + f1 * r2
        out[t] = float((w * pred1).sum() / w.sum())
        if t == obs.size:
            break
        o = obs[t]
        e0 = r1 if o == 1 else 1.0 - r1
        e1 = r2 if o == 1 else 1.0 - r2
        j0 = f0 * e0
        j1 = f1 * e1
        step = j0 + j1
        log_like += np.log(step)
        j0 /= step
        j1 /= step
        f0 = j0 * (1.0 - p1) + j1 * p2
        f1 = j0 * p1 + j1 * (1.0 - p2)
    return out


def exact_predictive(grid_resolution: int, history,
                     prior_alpha: float = 0.25) -> float:
    """Exact next-bit posterior predictive under the discretized prior."""
    return float(_oracle_predictives(history, grid_resolution, prior_alpha)[-1])


def exact_predictive_sequence(observations, grid_resolution: int = 21,
                              prior_alpha: float = 0.25) -> np.ndarray:
    """Predictives before each observation of the sequence, shape (T,)."""
    return _oracle_predictives(observations, grid_resolution, prior_alpha)[:-1]
