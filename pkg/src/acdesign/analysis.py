"""Evaluation battery for fitted policies.

Covers the generalization comparison (fit deficits and their worst case
over datasets), trial-by-trial trajectory comparison, distillation of a
policy's logit onto recency-weighted n-gram features, exhaustive
clustering of short-sequence logits, and task-space descriptor maps.
Everything here is pure over immutable model and dataset inputs and
emits plot-ready tables.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from . import seeds
from .env_hmm import TaskParams, ambiguity, mixing_time, sample_trajectory
from .gru_policy import GruPolicy, GruWeights, dataset_nll
from .ideal_learner import ResourceLimitError
from .regret_search import estimate_regret

__all__ = [
    "fit_deficit",
    "worst_case_deficit",
    "DeficitTable",
    "deficit_table",
    "model_trajectory",
    "empirical_trajectory",
    "l1_trajectory_distance",
    "QFeatureConfig",
    "ngram_q_features",
    "ngram_q_series",
    "probe_corpus",
    "distill_glm",
    "distill_over_grid",
    "enumerate_sequences",
    "cluster_sequences",
    "env_map",
]


def _as_policy(model):
    if hasattr(model, "start") and hasattr(model, "step"):
        return model
    if isinstance(model, GruWeights):
        return GruPolicy(model)
    raise TypeError("expected GruWeights or a rollout policy adapter")


# ---------------------------------------------------------------------------
# fit deficits


def fit_deficit(model, dataset, model_pool) -> float:
    """Mean NLL of the model on the dataset, above the pool's best.

    The model itself competes in the pool, so the result is never
    negative and the pool-best model scores exactly zero.
    """
    pool = list(model_pool)
    if not pool:
        raise ValueError("model pool must be nonempty")
    own = dataset_nll(model, dataset)
    best = min(own, min(dataset_nll(m, dataset) for m in pool))
    return own - best


def worst_case_deficit(model, datasets, model_pool) -> float:
    """Largest fit deficit across the given datasets."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("need at least one dataset")
    return max(fit_deficit(model, ds, model_pool) for ds in datasets)


@dataclass(frozen=True)
class DeficitTable:
    """All (model, dataset) mean NLLs and deficits, plus per-model worst case."""

    rows: tuple  # of dicts: model, dataset, nll, deficit
    worst_case: dict  # model id -> worst-case deficit

    def as_csv(self) -> str:
        lines = ["model,dataset,nll,deficit"]
        for r in self.rows:
            lines.append(f"{r['model']},{r['dataset']},{r['nll']:.6f},"
                         f"{r['deficit']:.6f}")
        return "\n".join(lines) + "\n"


def deficit_table(models: dict, datasets: dict) -> DeficitTable:
    """Cross-evaluate every model on every dataset.

    `models` maps id -> GruWeights, `datasets` maps id -> Dataset. Per
    dataset, the deficit baseline is the pool minimum over the given
    models.
    """
    if not models or not datasets:
        raise ValueError("need at least one model and one dataset")
    nll = {(mid, did): dataset_nll(w, ds)
           for mid, w in models.items() for did, ds in datasets.items()}
    rows = []
    worst = {mid: 0.0 for mid in models}
    for did in datasets:
        floor = min(nll[(mid, did)] for mid in models)
        for mid in models:
            deficit = nll[(mid, did)] - floor
            rows.append({"model": mid, "dataset": did,
                         "nll": nll[(mid, did)], "deficit": deficit})
            worst[mid] = max(worst[mid], deficit)
    return DeficitTable(rows=tuple(rows), worst_case=worst)


# ---------------------------------------------------------------------------
# trajectories


def model_trajectory(model, observation_sequence, n_rollouts: int,
                     seed: int) -> np.ndarray:
    """Mean per-step choice probability with observations pinned.

    Actions are sampled closed-loop; the returned value at each step is
    the average of the policy's probability of choosing 1, not of the
    sampled actions.
    """
    obs = np.asarray(observation_sequence, dtype=np.int64)
    if obs.ndim != 1 or obs.size == 0:
        raise ValueError("need a nonempty observation sequence")
    policy = _as_policy(model)
    rng = seeds.rng_from(seed)
    state = policy.start(n_rollouts)
    prev_a = prev_o = None
    out = np.zeros(obs.size)
    for t in range(obs.size):
        p = policy.step(state, prev_a, prev_o)
        p = np.broadcast_to(np.asarray(p, dtype=float), (n_rollouts,))
        out[t] = p.mean()
        prev_a = (rng.random(n_rollouts) < p).astype(float)
        prev_o = np.full(n_rollouts, obs[t])
    return out


def empirical_trajectory(dataset) -> np.ndarray:
    """Per-step fraction choosing 1, over sessions sharing one observation row."""
    sessions = list(getattr(dataset, "sessions", dataset))
    if not sessions:
        raise ValueError("need at least one session")
    ref = sessions[0].outcomes
    for s in sessions[1:]:
        if not np.array_equal(s.outcomes, ref):
            raise ValueError("sessions must share the identical observation sequence")
    actions = np.stack([s.actions for s in sessions])
    return actions.mean(axis=0)


def l1_trajectory_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("trajectories must have equal length")
    return float(np.abs(p - q).mean())


# ---------------------------------------------------------------------------
# n-gram features


@dataclass(frozen=True)
class QFeatureConfig:
    """Recency-weighted n-gram features of the outcome stream.

    The optional run-length, recent-window, and interaction columns are
    off by default so the three gram orders stay directly comparable.
    """

    n: int = 2
    recency: float = 0.9
    include_run_length: bool = False
    window: int = 0  # how many most-recent outcomes enter as raw features
    interactions: bool = False  # Q features crossed with the last outcome

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError("gram length must be 1, 2, or 3")
        if not 0.0 < self.recency < 1.0:
            raise ValueError("recency must be strictly inside (0, 1)")
        if self.window < 0:
            raise ValueError("window must be nonnegative")

    @property
    def grams(self) -> tuple:
        return tuple(itertools.product((0, 1), repeat=self.n))

    @property
    def feature_names(self) -> tuple:
        names = [f"q_{''.join(map(str, g))}" for g in self.grams]
        if self.include_run_length:
            names.append("run_length")
        names.extend(f"prev_{i + 1}" for i in range(self.window))
        if self.interactions:
            names.extend(f"q_{''.join(map(str, g))}_x_last"
                         for g in self.grams)
        return tuple(names)


def _q_series_matrix(obs: np.ndarray, config: QFeatureConfig) -> np.ndarray:
    """Q values after each prefix, rows 0..T (row t = after t outcomes).

    Vectorized over a batch of sequences: obs has shape (S, T), output
    (S, T+1, n_grams). The recursion is a first-order linear filter over
    the per-step gram indicators.
    """
    s, t = obs.shape
    n, lam = config.n, config.recency
    out = np.zeros((s, t + 1, len(config.grams)))
    if t < n:
        return out
    for gi, gram in enumerate(config.grams):
        hit = np.ones((s, t - n + 1), dtype=bool)
        for off, bit in enumerate(gram):
            hit &= obs[:, off:off + t - n + 1] == bit
        # Q_t = lam * Q_{t-1} + (1 - lam) * hit_t, zero before grams fire
        q = scipy.signal.lfilter([1.0 - lam], [1.0, -lam],
                                 hit.astype(float), axis=1)
        out[:, n:, gi] = q
    return out


def ngram_q_series(observations, config: QFeatureConfig) -> np.ndarray:
    """Feature rows available before each step of one sequence.

    Row t (0-based) holds the features computed from the first t
    outcomes, i.e. what a predictor may condition on at step t+1. The
    result has one row per step, length equal to the sequence.
    """
    obs = np.asarray(observations, dtype=np.int64).reshape(1, -1)
    return _batch_feature_series(obs, config)[0]


def _batch_feature_series(obs: np.ndarray, config: QFeatureConfig) -> np.ndarray:
    """(S, T, F) feature rows; row [:, t] uses only the first t outcomes."""
    s, t = obs.shape
    q = _q_series_matrix(obs, config)[:, :t, :]  # drop the post-final row
    cols = [q]
    if config.include_run_length:
        # run[:, t'] = trailing identical-outcome count of the first t' outcomes
        run = np.zeros((s, t))
        current = np.ones(s)
        for step in range(1, t):
            if step >= 2:
                same = obs[:, step - 1] == obs[:, step - 2]
                current = np.where(same, current + 1.0, 1.0)
            else:
                current = np.ones(s)
            run[:, step] = current
        cols.append(run[:, :, None])
    for i in range(config.window):
        # i-th most recent outcome before the step, zero-padded
        col = np.zeros((s, t))
        if t > i:
            col[:, i + 1:] = obs[:, :t - i - 1]
        cols.append(col[:, :, None])
    if config.interactions:
        last = np.zeros((s, t))
        last[:, 1:] = obs[:, :t - 1]
        cols.append(q * last[:, :, None])
    return np.concatenate(cols, axis=2)


def ngram_q_features(history, config: QFeatureConfig) -> np.ndarray:
    """Features after consuming the entire history (next-step predictors)."""
    obs = np.asarray(history, dtype=np.int64).reshape(1, -1)
    t = obs.shape[1]
    padded = np.concatenate([obs, np.zeros((1, 1), dtype=np.int64)], axis=1)
    return _batch_feature_series(padded, config)[0, t]


# ---------------------------------------------------------------------------
# distillation


def probe_corpus(tasks, n_sequences: int, horizon: int, seed: int) -> np.ndarray:
    """Observation sequences from a uniform mixture over the given tasks."""
    tasks = list(tasks)
    if not tasks or n_sequences < 1:
        raise ValueError("need at least one task and one sequence")
    rng = seeds.rng_from(seed, 0)
    picks = rng.integers(0, len(tasks), size=n_sequences)
    obs = np.empty((n_sequences, horizon), dtype=np.int64)
    for i, pick in enumerate(picks):
        traj = sample_trajectory(tasks[pick], horizon, seeds.derive(seed, 1, i))
        obs[i] = traj.observations
    return obs


def _closed_loop_logits(policy, obs: np.ndarray, rng,
                        greedy: bool = False) -> np.ndarray:
    """Per-step logits over a batch of pinned observation rows."""
    s, t = obs.shape
    state = policy.start(s)
    prev_a = prev_o = None
    logits = np.empty((s, t))
    for step in range(t):
        p = np.asarray(policy.step(state, prev_a, prev_o), dtype=float)
        p = np.clip(np.broadcast_to(p, (s,)), 1e-15, 1.0 - 1e-15)
        logits[:, step] = np.log(p) - np.log1p(-p)
        if greedy:
            act = p >= 0.5
        else:
            act = rng.random(s) < p
        prev_a = act.astype(float)
        prev_o = obs[:, step]
    return logits


def distill_glm(model, config: QFeatureConfig, probe, seed: int):
    """Least-squares fit of the policy's logit on outcome features.

    Runs the model closed-loop over the probe sequences, regresses the
    per-step logit on the feature rows (plus intercept), and reports the
    coefficient table with R² on a held-out 20% split of sequences.
    Collinear design columns are dropped with a warning.
    """
    obs = np.asarray(probe, dtype=np.int64)
    if obs.ndim != 2 or obs.size == 0:
        raise ValueError("probe corpus must be a nonempty (sequences, steps) array")
    policy = _as_policy(model)
    rng = seeds.rng_from(seed, 0)
    logits = _closed_loop_logits(policy, obs, rng)
    feats = _batch_feature_series(obs, config)

    s = obs.shape[0]
    order = seeds.rng_from(seed, 1).permutation(s)
    n_test = max(1, round(0.2 * s)) if s > 1 else 0
    test_idx, train_idx = order[:n_test], order[n_test:]
    if train_idx.size == 0:
        train_idx = test_idx

    names = ("intercept",) + config.feature_names

    def flat(idx):
        x = feats[idx].reshape(-1, feats.shape[2])
        ones = np.ones((x.shape[0], 1))
        return np.hstack([ones, x]), logits[idx].reshape(-1)

    x_train, y_train = flat(train_idx)
    x_test, y_test = flat(test_idx if n_test else train_idx)

    # rank-revealing QR to locate collinear columns
    _, r, piv = scipy.linalg.qr(x_train, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    keep_count = int((diag > max(diag[0], 1e-300) * 1e-10).sum())
    kept = np.sort(piv[:keep_count])
    if keep_count < x_train.shape[1]:
        dropped = [names[j] for j in sorted(piv[keep_count:])]
        warnings.warn(f"dropping collinear feature columns: {dropped}")

    beta_kept, *_ = np.linalg.lstsq(x_train[:, kept], y_train, rcond=None)
    beta = np.zeros(x_train.shape[1])
    beta[kept] = beta_kept

    resid = y_test - x_test @ beta
    total = y_test - y_test.mean()
    ss_tot = float(total @ total)
    ss_res = float(resid @ resid)
    # guard against an (almost) constant target, where ss_tot is float noise
    floor = 1e-12 * y_test.size * max(1.0, float(y_test @ y_test) / y_test.size)
    if ss_tot <= floor:
        r2 = 1.0 if ss_res <= floor else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    coefficients = {name: float(b) for name, b in zip(names, beta)}
    return coefficients, float(r2)


RECENCY_GRID = (0.5, 0.7, 0.8, 0.9, 0.95)


def distill_over_grid(model, n: int, probe, seed: int,
                      recencies=RECENCY_GRID, **flags):
    """Distill at each recency constant and keep the best held-out R²."""
    best = None
    for lam in recencies:
        config = QFeatureConfig(n=n, recency=lam, **flags)
        coefficients, r2 = distill_glm(model, config, probe, seed)
        if best is None or r2 > best[2]:
            best = (config, coefficients, r2)
    return best


# ---------------------------------------------------------------------------
# exhaustive sequence clustering


def enumerate_sequences(length: int) -> np.ndarray:
    """All binary sequences of the given length, one per row."""
    if length > 20:
        raise ResourceLimitError("sequence enumeration capped at length 20")
    if length < 1:
        raise ValueError("length must be positive")
    codes = np.arange(2 ** length, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(length - 1, -1, -1)) & 1
    return bits.astype(np.int64)


def _gmm_em(x: np.ndarray, k: int, rng, max_iter: int = 300,
            tol: float = 1e-9):
    """One EM run on 2-D data; returns (params, log-likelihood trace)."""
    n, d = x.shape
    means = x[rng.choice(n, size=k, replace=False)].astype(float)
    base_cov = np.cov(x.T) + 1e-6 * np.eye(d)
    covs = np.stack([base_cov.copy() for _ in range(k)])
    weights = np.full(k, 1.0 / k)
    trace = []
    resp = np.zeros((n, k))
    for _ in range(max_iter):
        # E-step in log space
        log_p = np.empty((n, k))
        for j in range(k):
            diff = x - means[j]
            cov = covs[j] + 1e-9 * np.eye(d)
            inv = np.linalg.inv(cov)
            _, logdet = np.linalg.slogdet(cov)
            quad = np.einsum("ni,ij,nj->n", diff, inv, diff)
            log_p[:, j] = (math.log(weights[j]) - 0.5 *
                           (quad + logdet + d * math.log(2.0 * math.pi)))
        row_max = log_p.max(axis=1, keepdims=True)
        log_norm = row_max + np.log(np.exp(log_p - row_max).sum(axis=1,
                                                                keepdims=True))
        ll = float(log_norm.sum())
        resp = np.exp(log_p - log_norm)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * abs(trace[-2]):
            break
        # M-step
        nk = resp.sum(axis=0) + 1e-12
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for j in range(k):
            diff = x - means[j]
            covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j]
    return {"means": means, "covariances": covs, "weights": weights,
            "responsibilities": resp}, trace


def cluster_sequences(model, length: int = 15, k: int = 2, seed: int = 0,
                      n_restarts: int = 5) -> dict:
    """Cluster every length-L sequence by the model's final two logits.

    The model runs greedily closed-loop over the full enumeration; the
    logit pair from the last two steps feeds a Gaussian mixture fit by
    expectation-maximization, restarted from seeded initializations with
    the best likelihood kept. The report describes each cluster by its
    mean fraction of 1-bits ("ones") and of adjacent unequal pairs
    ("alts").
    """
    obs = enumerate_sequences(length)
    policy = _as_policy(model)
    logits = _closed_loop_logits(policy, obs, rng=None, greedy=True)
    x = logits[:, -2:]

    best, best_trace = None, None
    for restart in range(n_restarts):
        rng = seeds.rng_from(seed, restart)
        params, trace = _gmm_em(x, k, rng)
        if best is None or trace[-1] > best_trace[-1]:
            best, best_trace = params, trace

    labels = best["responsibilities"].argmax(axis=1)
    ones = obs.mean(axis=1)
    alts = (obs[:, 1:] != obs[:, :-1]).mean(axis=1)

    def per_cluster(values):
        return [float(values[labels == j].mean()) if (labels == j).any()
                else None for j in range(k)]

    report = {
        "length": length,
        "n_sequences": int(obs.shape[0]),
        "sizes": [int((labels == j).sum()) for j in range(k)],
        "ones": per_cluster(ones),
        "alts": per_cluster(alts),
        "logit_means": [list(map(float, best["means"][j])) for j in range(k)],
        "log_likelihood": float(best_trace[-1]),
        "ll_trace": [float(v) for v in best_trace],
        "labels": labels.astype(int).tolist(),
    }
    return report


# ---------------------------------------------------------------------------
# task-space map


def env_map(params_list, model=None, n_background: int = 10000,
            seed: int = 0, n_rollouts: int = 300,
            horizon: int = 50) -> list[dict]:
    """Descriptor rows for given tasks plus a uniform background sample."""
    rows = []
    for i, task in enumerate(params_list):
        row = {"task": task.to_dict(), "kind": "selected",
               "mixing_time": mixing_time(task), "ambiguity": ambiguity(task)}
        if model is not None:
            est = estimate_regret(model, task, n_rollouts,
                                  seeds.derive(seed, 1, i), horizon=horizon)
            row["regret"] = est.regret
        rows.append(row)
    rng = seeds.rng_from(seed, 0)
    for _ in range(n_background):
        task = TaskParams(*(float(v) for v in rng.uniform(size=4)))
        rows.append({"task": task.to_dict(), "kind": "background",
                     "mixing_time": mixing_time(task),
                     "ambiguity": ambiguity(task)})
    return rows
