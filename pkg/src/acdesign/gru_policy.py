"""Gated recurrent behavioral model: forward pass, exact gradient, fitting.

A single-layer gated recurrent cell with hidden width 7 (configurable),
fed x_t = (previous action, previous outcome) with x_1 = (0, 0) and a
learned initial hidden state, readout logit = w . h + b, action
probability sigmoid(logit).

Everything is hand-rolled double-precision numpy: the backward pass is
exact backpropagation through time (verified against central finite
differences), and fitting is adaptive-moment gradient descent with
gradient clipping, an L2 penalty on the weight matrices and readout
vector (biases and the initial state are unpenalized), and early
stopping on a held-out session split.

Sessions are duck-typed: any object with integer `actions` and
`outcomes` arrays of equal length works, so this module stays
independent of the experiment-loop record types.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

__all__ = [
    "GruWeights",
    "FitConfig",
    "FitDivergenceError",
    "init_weights",
    "zero_weights",
    "gru_step",
    "encode_input",
    "session_nll",
    "nll_gradient",
    "fit",
    "evaluate_accuracy",
    "GruPolicy",
    "save_checkpoint",
    "load_checkpoint",
]

INPUT_DIM = 2
DEFAULT_HIDDEN = 7


class FitDivergenceError(RuntimeError):
    """Fitting produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class GruWeights:
    """All 225 parameters of the width-7 model (3d^2 + 9d + 1 in general)."""

    wx_u: np.ndarray  # update gate, input weights (d, 2)
    wh_u: np.ndarray  # update gate, recurrent weights (d, d)
    b_u: np.ndarray  # update gate bias (d,)
    wx_r: np.ndarray  # reset gate, input weights (d, 2)
    wh_r: np.ndarray  # reset gate, recurrent weights (d, d)
    b_r: np.ndarray  # reset gate bias (d,)
    wx_c: np.ndarray  # candidate, input weights (d, 2)
    wh_c: np.ndarray  # candidate, recurrent weights (d, d)
    b_c: np.ndarray  # candidate bias (d,)
    w_out: np.ndarray  # readout vector (d,)
    b_out: float  # readout bias
    h0: np.ndarray  # learned initial hidden state (d,)

    def __post_init__(self):
        d = self.hidden_dim
        shapes = {
            "wx_u": (d, INPUT_DIM), "wh_u": (d, d), "b_u": (d,),
            "wx_r": (d, INPUT_DIM), "wh_r": (d, d), "b_r": (d,),
            "wx_c": (d, INPUT_DIM), "wh_c": (d, d), "b_c": (d,),
            "w_out": (d,), "h0": (d,),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, wanted {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if not math.isfinite(self.b_out):
            raise ValueError("b_out is not finite")

    @property
    def hidden_dim(self) -> int:
        return self.w_out.shape[0]

    @property
    def n_params(self) -> int:
        d = self.hidden_dim
        return 3 * (d * INPUT_DIM + d * d + d) + d + 1 + d

    # Flat packing (fixed field order) for the optimizer and checkpoints.

    def to_flat(self) -> np.ndarray:
        parts = [self.wx_u, self.wh_u, self.b_u, self.wx_r, self.wh_r,
                 self.b_r, self.wx_c, self.wh_c, self.b_c, self.w_out,
                 np.array([self.b_out]), self.h0]
        return np.concatenate([p.ravel() for p in parts])

    @classmethod
    def from_flat(cls, flat: np.ndarray, hidden_dim: int = DEFAULT_HIDDEN):
        d = hidden_dim
        sizes = [d * INPUT_DIM, d * d, d] * 3 + [d, 1, d]
        shapes = [(d, INPUT_DIM), (d, d), (d,)] * 3 + [(d,), (1,), (d,)]
        if flat.shape != (sum(sizes),):
            raise ValueError(f"flat vector has shape {flat.shape}")
        out, at = [], 0
        for size, shape in zip(sizes, shapes):
            out.append(flat[at:at + size].reshape(shape).copy())
            at += size
        return cls(wx_u=out[0], wh_u=out[1], b_u=out[2],
                   wx_r=out[3], wh_r=out[4], b_r=out[5],
                   wx_c=out[6], wh_c=out[7], b_c=out[8],
                   w_out=out[9], b_out=float(out[10][0]), h0=out[11])


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 5e-3
    max_epochs: int = 2000
    batch_size: int = 32  # sessions per gradient step
    clip_norm: float = 5.0
    patience: int = 50  # epochs without validation improvement
    l2_penalty: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        positives = ("learning_rate", "max_epochs", "batch_size", "clip_norm",
                     "patience")
        for name in positives:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")


def init_weights(seed: int, hidden_dim: int = DEFAULT_HIDDEN,
                 scale: float = 0.2) -> GruWeights:
    """Small random matrices, zero biases and initial state."""
    rng = np.random.default_rng(seed)
    d = hidden_dim

    def mat(rows, cols):
        return rng.normal(0.0, scale, (rows, cols)) / math.sqrt(cols)

    return GruWeights(
        wx_u=mat(d, INPUT_DIM), wh_u=mat(d, d), b_u=np.zeros(d),
        wx_r=mat(d, INPUT_DIM), wh_r=mat(d, d), b_r=np.zeros(d),
        wx_c=mat(d, INPUT_DIM), wh_c=mat(d, d), b_c=np.zeros(d),
        w_out=rng.normal(0.0, scale, d) / math.sqrt(d), b_out=0.0,
        h0=np.zeros(d))


def zero_weights(hidden_dim: int = DEFAULT_HIDDEN) -> GruWeights:
    """The constant-0.5 policy: every parameter zero."""
    return GruWeights.from_flat(
        np.zeros(3 * (hidden_dim * INPUT_DIM + hidden_dim ** 2 + hidden_dim)
                 + 2 * hidden_dim + 1), hidden_dim)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x):
    # log(1 + e^x), stable for large |x|
    return np.logaddexp(0.0, x)


def encode_input(prev_action, prev_outcome) -> np.ndarray:
    """Feature vector (previous action, previous outcome); zeros at t=1."""
    if prev_action is None or prev_outcome is None:
        return np.zeros(INPUT_DIM)
    return np.array([float(prev_action), float(prev_outcome)])


def gru_step(weights: GruWeights, hidden: np.ndarray,
             x: np.ndarray) -> tuple[np.ndarray, float]:
    """One recurrence step: returns (new hidden state, readout logit)."""
    u = _sigmoid(weights.wx_u @ x + weights.wh_u @ hidden + weights.b_u)
    r = _sigmoid(weights.wx_r @ x + weights.wh_r @ hidden + weights.b_r)
    c = np.tanh(weights.wx_c @ x + weights.wh_c @ (r * hidden) + weights.b_c)
    h_new = (1.0 - u) * hidden + u * c
    return h_new, float(weights.w_out @ h_new + weights.b_out)


# -- batched forward / backward ------------------------------------------------


def _stack_sessions(sessions) -> tuple[np.ndarray, np.ndarray]:
    """Actions (S, T) and inputs (S, T, 2) under the x_1 = (0,0) convention."""
    if len(sessions) == 0:
        raise ValueError("need at least one session")
    acts = [np.asarray(s.actions, dtype=float) for s in sessions]
    outs = [np.asarray(s.outcomes, dtype=float) for s in sessions]
    horizon = len(acts[0])
    if horizon == 0:
        raise ValueError("sessions must contain at least one trial")
    if any(len(a) != horizon or len(o) != horizon
           for a, o in zip(acts, outs)):
        raise ValueError("all sessions must share one horizon")
    a = np.stack(acts)
    o = np.stack(outs)
    x = np.zeros((len(sessions), horizon, INPUT_DIM))
    x[:, 1:, 0] = a[:, :-1]
    x[:, 1:, 1] = o[:, :-1]
    return a, x


def _forward(weights: GruWeights, x: np.ndarray):
    """Roll the cell over (S, T, 2) inputs, storing per-step activations."""
    s, t_len, _ = x.shape
    d = weights.hidden_dim
    h = np.empty((s, t_len + 1, d))
    h[:, 0] = weights.h0
    gate_u = np.empty((s, t_len, d))
    gate_r = np.empty((s, t_len, d))
    cand = np.empty((s, t_len, d))
    for t in range(t_len):
        xt, hp = x[:, t], h[:, t]
        u = _sigmoid(xt @ weights.wx_u.T + hp @ weights.wh_u.T + weights.b_u)
        r = _sigmoid(xt @ weights.wx_r.T + hp @ weights.wh_r.T + weights.b_r)
        c = np.tanh(xt @ weights.wx_c.T + (r * hp) @ weights.wh_c.T
                    + weights.b_c)
        gate_u[:, t], gate_r[:, t], cand[:, t] = u, r, c
        h[:, t + 1] = (1.0 - u) * hp + u * c
    logits = h[:, 1:] @ weights.w_out + weights.b_out
    return h, gate_u, gate_r, cand, logits


def session_nll(weights: GruWeights, session) -> float:
    """Mean per-trial negative log-likelihood of the recorded actions.

    Teacher forcing: the recurrence consumes the session's recorded
    actions and outcomes regardless of what the model would have done.
    """
    a, x = _stack_sessions([session])
    _, _, _, _, logits = _forward(weights, x)
    return float((_softplus(logits) - a * logits).mean())


def _mean_nll_and_gradient(weights: GruWeights, sessions,
                           want_gradient: bool = True):
    """Mean of per-session mean NLLs, and its exact gradient."""
    a, x = _stack_sessions(sessions)
    s, t_len = a.shape
    h, gate_u, gate_r, cand, logits = _forward(weights, x)
    nll = float((_softplus(logits) - a * logits).mean(axis=1).mean())
    if not want_gradient:
        return nll, None

    d = weights.hidden_dim
    g = {name: np.zeros_like(getattr(weights, name))
         for name in ("wx_u", "wh_u", "b_u", "wx_r", "wh_r", "b_r",
                      "wx_c", "wh_c", "b_c", "w_out", "h0")}
    g_b_out = 0.0
    # d(mean nll)/d(logit_t) for every session and trial
    dlogit = (_sigmoid(logits) - a) / (t_len * s)
    dh = np.zeros((s, d))
    for t in range(t_len - 1, -1, -1):
        xt, hp = x[:, t], h[:, t]
        u, r, c = gate_u[:, t], gate_r[:, t], cand[:, t]
        dl = dlogit[:, t]
        g["w_out"] += dl @ h[:, t + 1]
        g_b_out += dl.sum()
        dh = dh + dl[:, None] * weights.w_out

        dau = dh * (c - hp) * u * (1.0 - u)
        dac = dh * u * (1.0 - c * c)
        dh_prev = dh * (1.0 - u)

        g["wx_c"] += dac.T @ xt
        g["wh_c"] += dac.T @ (r * hp)
        g["b_c"] += dac.sum(axis=0)
        drh = dac @ weights.wh_c
        dar = drh * hp * r * (1.0 - r)
        dh_prev = dh_prev + drh * r

        g["wx_r"] += dar.T @ xt
        g["wh_r"] += dar.T @ hp
        g["b_r"] += dar.sum(axis=0)
        dh_prev = dh_prev + dar @ weights.wh_r

        g["wx_u"] += dau.T @ xt
        g["wh_u"] += dau.T @ hp
        g["b_u"] += dau.sum(axis=0)
        dh_prev = dh_prev + dau @ weights.wh_u

        dh = dh_prev
    g["h0"] += dh.sum(axis=0)
    if not (math.isfinite(nll) and math.isfinite(g_b_out)
            and all(np.all(np.isfinite(v)) for v in g.values())):
        raise FitDivergenceError(
            "non-finite loss or gradient; check the data for invalid entries "
            "or lower the learning rate")
    grad = GruWeights(b_out=float(g_b_out), **g)
    return nll, grad


def nll_gradient(weights: GruWeights, dataset) -> GruWeights:
    """Exact gradient of the dataset-mean session NLL (no penalty term)."""
    sessions = list(getattr(dataset, "sessions", dataset))
    _, grad = _mean_nll_and_gradient(weights, sessions)
    return grad


def dataset_nll(weights: GruWeights, dataset) -> float:
    """Mean of per-session mean NLLs over a dataset."""
    sessions = list(getattr(dataset, "sessions", dataset))
    nll, _ = _mean_nll_and_gradient(weights, sessions, want_gradient=False)
    return nll


# Matrix blocks (plus the readout vector) that receive the L2 penalty.
_PENALIZED = ("wx_u", "wh_u", "wx_r", "wh_r", "wx_c", "wh_c", "w_out")


def _penalty_gradient_flat(weights: GruWeights, l2: float) -> np.ndarray:
    masked = replace(
        weights,
        **{f.name: (getattr(weights, f.name) if f.name in _PENALIZED
                    else np.zeros_like(getattr(weights, f.name)))
           for f in fields(weights) if f.name not in ("b_out",)},
        b_out=0.0)
    return 2.0 * l2 * masked.to_flat()


def fit(init: GruWeights, dataset, config: FitConfig | None = None) -> GruWeights:
    """Maximum-likelihood fit; returns the best-validation-loss weights.

    Adaptive-moment gradient descent over session minibatches with global
    gradient-norm clipping. 10% of sessions (at least one, when there are
    five or more) are held out; training stops after `patience` epochs
    without validation improvement. Deterministic in (init, dataset order,
    config).
    """
    config = config or FitConfig()
    sessions = list(getattr(dataset, "sessions", dataset))
    if not sessions:
        raise ValueError("cannot fit on an empty dataset")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(sessions))
    n_val = max(1, round(0.1 * len(sessions))) if len(sessions) >= 5 else 0
    val = [sessions[i] for i in order[:n_val]]
    train = [sessions[i] for i in order[n_val:]]
    if not val:
        val = train

    theta = init.to_flat()
    d = init.hidden_dim
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    best_val = math.inf
    best_theta = theta.copy()
    stale = 0

    for _epoch in range(config.max_epochs):
        perm = rng.permutation(len(train))
        for lo in range(0, len(train), config.batch_size):
            batch = [train[i] for i in perm[lo:lo + config.batch_size]]
            weights = GruWeights.from_flat(theta, d)
            nll, grad = _mean_nll_and_gradient(weights, batch)
            if not math.isfinite(nll):
                raise FitDivergenceError(
                    f"non-finite training loss at step {step}; "
                    "lower the learning rate")
            flat_grad = grad.to_flat() + _penalty_gradient_flat(
                weights, config.l2_penalty)
            if not np.all(np.isfinite(flat_grad)):
                raise FitDivergenceError(f"non-finite gradient at step {step}")
            norm = float(np.linalg.norm(flat_grad))
            if norm > config.clip_norm:
                flat_grad *= config.clip_norm / norm
            step += 1
            m = beta1 * m + (1 - beta1) * flat_grad
            v = beta2 * v + (1 - beta2) * flat_grad ** 2
            m_hat = m / (1 - beta1 ** step)
            v_hat = v / (1 - beta2 ** step)
            theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)

        val_nll, _ = _mean_nll_and_gradient(
            GruWeights.from_flat(theta, d), val, want_gradient=False)
        if not math.isfinite(val_nll):
            raise FitDivergenceError("non-finite validation loss")
        if val_nll < best_val - 1e-9:
            best_val = val_nll
            best_theta = theta.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return GruWeights.from_flat(best_theta, d)


# -- closed-loop evaluation ------------------------------------------------------


class GruPolicy:
    """Rollout adapter: plays whole trial batches, one hidden row per rollout."""

    def __init__(self, weights: GruWeights):
        self.weights = weights

    def start(self, n_rows: int) -> np.ndarray:
        return np.tile(self.weights.h0, (n_rows, 1))

    def step(self, hidden: np.ndarray, prev_actions, prev_outcomes) -> np.ndarray:
        """Advance every row one trial; returns P(a_t = 1) per row.

        Mutates `hidden` in place so the caller can keep passing the same
        array. Pass None for both previous values on the first trial.
        """
        w = self.weights
        n = hidden.shape[0]
        x = np.zeros((n, INPUT_DIM))
        if prev_actions is not None:
            x[:, 0] = prev_actions
            x[:, 1] = prev_outcomes
        u = _sigmoid(x @ w.wx_u.T + hidden @ w.wh_u.T + w.b_u)
        r = _sigmoid(x @ w.wx_r.T + hidden @ w.wh_r.T + w.b_r)
        c = np.tanh(x @ w.wx_c.T + (r * hidden) @ w.wh_c.T + w.b_c)
        hidden[:] = (1.0 - u) * hidden + u * c
        return _sigmoid(hidden @ w.w_out + w.b_out)


def evaluate_accuracy(weights: GruWeights, params, horizon: int,
                      n_rollouts: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo closed-loop accuracy: sampled actions feed back as input."""
    from .env_hmm import sample_observation_batch

    if n_rollouts < 2:
        raise ValueError("n_rollouts must be >= 2")
    rng_env = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    rng_act = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    obs = sample_observation_batch(params, horizon, n_rollouts, rng_env)
    policy = GruPolicy(weights)
    hidden = policy.start(n_rollouts)
    prev_a = prev_o = None
    correct = np.zeros(n_rollouts)
    for t in range(horizon):
        p = policy.step(hidden, prev_a, prev_o)
        a = (rng_act.random(n_rollouts) < p).astype(float)
        correct += a == obs[:, t]
        prev_a, prev_o = a, obs[:, t].astype(float)
    acc = correct / horizon
    return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(n_rollouts))


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(weights: GruWeights, path, meta: dict | None = None) -> None:
    """JSON checkpoint; floats round-trip bit-exactly via repr serialization."""
    doc = {
        "dims": {"input": INPUT_DIM, "hidden": weights.hidden_dim},
        "weights": {
            f.name: (getattr(weights, f.name).tolist()
                     if f.name != "b_out" else weights.b_out)
            for f in fields(weights)
        },
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_checkpoint(path) -> tuple[GruWeights, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc["dims"]["input"] != INPUT_DIM:
        raise ValueError("checkpoint input width mismatch")
    raw = doc["weights"]
    weights = GruWeights(**{
        name: (np.asarray(raw[name], dtype=float) if name != "b_out"
               else float(raw[name]))
        for name in raw
    })
    if weights.hidden_dim != doc["dims"]["hidden"]:
        raise ValueError("checkpoint hidden width mismatch")
    return weights, doc.get("meta", {})
