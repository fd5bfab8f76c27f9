"""Environment model: validation, sampling laws, symmetries, likelihood."""

import itertools
import math

import numpy as np
import pytest

from acdesign.env_hmm import (
    DegenerateChainError,
    ParameterError,
    TaskParams,
    Trajectory,
    _emission_flip,
    _state_swap,
    alternation_rate,
    ambiguity,
    log_likelihood,
    mixing_time,
    sample_observation_batch,
    sample_trajectory,
    stationary_distribution,
    sym_distance,
    symmetry_orbit,
)


def brute_force_log_likelihood(params: TaskParams, obs) -> float:
    """Oracle: marginalize the exact joint over every latent state path."""
    t_len = len(obs)
    assert t_len <= 8, "path enumeration is 2**T"
    trans = [[1 - params.p1, params.p1], [params.p2, 1 - params.p2]]
    emit1 = [params.r1, params.r2]
    total = 0.0
    for path in itertools.product((0, 1), repeat=t_len):
        pr = params.mu[path[0]]
        for t in range(1, t_len):
            pr *= trans[path[t - 1]][path[t]]
        for t in range(t_len):
            r = emit1[path[t]]
            pr *= r if obs[t] == 1 else 1.0 - r
        total += pr
    return math.log(total) if total > 0 else float("-inf")


def random_params(rng) -> TaskParams:
    return TaskParams(*(float(x) for x in rng.random(4)))


# -- parameter and trajectory types -------------------------------------------


def test_params_validation_rejects_out_of_range():
    with pytest.raises(ParameterError):
        TaskParams(1.2, 0.5, 0.5, 0.5)
    with pytest.raises(ParameterError):
        TaskParams(0.5, -0.1, 0.5, 0.5)
    with pytest.raises(ParameterError):
        TaskParams(0.5, 0.5, 0.5, 0.5, mu=(0.7, 0.7))


def test_params_dict_round_trip():
    p = TaskParams(0.1, 0.9, 0.25, 0.75)
    q = TaskParams.from_dict(p.to_dict())
    assert q == p
    assert np.allclose(p.vector, [0.1, 0.9, 0.25, 0.75])


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(states=np.array([1, 2]), observations=np.array([0]), seed=0)
    with pytest.raises(ValueError):
        Trajectory(states=np.array([0, 1]), observations=np.array([0, 1]), seed=0)
    with pytest.raises(ValueError):
        Trajectory(states=np.array([1, 2]), observations=np.array([0, 2]), seed=0)


def test_sampling_is_deterministic_in_seed():
    p = TaskParams(0.3, 0.7, 0.2, 0.9)
    a = sample_trajectory(p, 50, seed=123)
    b = sample_trajectory(p, 50, seed=123)
    c = sample_trajectory(p, 50, seed=124)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.observations, b.observations)
    assert not (np.array_equal(a.states, c.states)
                and np.array_equal(a.observations, c.observations))


def test_uniform_chain_with_deterministic_emissions_is_fair():
    # p1 = p2 = 0.5 makes the state iid uniform, and r = (0, 1) copies it.
    p = TaskParams(0.5, 0.5, 0.0, 1.0)
    rng = np.random.default_rng(7)
    obs = sample_observation_batch(p, 50, 2000, rng)  # 1e5 bits
    assert abs(obs.mean() - 0.5) < 0.01


def test_batch_sampling_matches_single_trajectory_law():
    p = TaskParams(0.15, 0.4, 0.1, 0.8)
    rng = np.random.default_rng(11)
    obs = sample_observation_batch(p, 50, 4000, rng)
    singles = np.stack([sample_trajectory(p, 50, seed=s).observations
                        for s in range(2000)])
    assert abs(obs.mean() - singles.mean()) < 0.012


# -- stationary structure ------------------------------------------------------


def test_stationary_distribution_is_fixed_point():
    rng = np.random.default_rng(5)
    for _ in range(25):
        p = random_params(rng)
        pi = np.array(stationary_distribution(p))
        trans = np.array([[1 - p.p1, p.p1], [p.p2, 1 - p.p2]])
        assert np.all(pi >= 0) and abs(pi.sum() - 1) < 1e-12
        assert np.max(np.abs(pi @ trans - pi)) < 1e-12


def test_stationary_distribution_degenerate_chain():
    with pytest.raises(DegenerateChainError):
        stationary_distribution(TaskParams(0.0, 0.0, 0.2, 0.8))


def test_mixing_time_values():
    assert mixing_time(TaskParams(0.5, 0.5, 0, 1)) == 0.0
    assert math.isinf(mixing_time(TaskParams(0.0, 0.0, 0, 1)))
    p = TaskParams(0.1, 0.2, 0.3, 0.4)
    assert mixing_time(p) == pytest.approx(-1.0 / math.log(abs(1 - 0.1 - 0.2)))


def test_ambiguity():
    assert ambiguity(TaskParams(0.5, 0.5, 0.0, 1.0)) == 0.0
    assert ambiguity(TaskParams(0.5, 0.5, 0.4, 0.4)) == 1.0


def test_alternation_rate_matches_empirical_frequency():
    rng = np.random.default_rng(3)
    for seed in range(3):
        p = random_params(rng)
        analytic = alternation_rate(p)
        obs = sample_observation_batch(p, 51, 4000,
                                       np.random.default_rng(seed + 50))
        # Discard a short burn-in so the chain is near stationarity.
        tail = obs[:, 30:]
        empirical = (tail[:, 1:] != tail[:, :-1]).mean()
        assert abs(analytic - empirical) < 0.015


def test_alternation_rate_deterministic_alternator():
    # Always switch, deterministic opposite emissions: alternates every step.
    assert alternation_rate(TaskParams(1.0, 1.0, 0.0, 1.0)) == pytest.approx(1.0)
    # Never switch: the sequence is constant when emissions are deterministic.
    assert alternation_rate(TaskParams(0.0, 0.0, 0.0, 1.0)) == pytest.approx(0.0)


# -- symmetry group ------------------------------------------------------------


def test_orbit_size_and_closure():
    rng = np.random.default_rng(9)
    for _ in range(10):
        p = random_params(rng)
        orbit = symmetry_orbit(p)
        assert 1 <= len(orbit) <= 4
        assert p in orbit
        for q in orbit:
            assert symmetry_orbit(q) == orbit


def test_orbit_fixed_points():
    # r = 0.5 is fixed under the emission flip, so everything collapses.
    assert len(symmetry_orbit(TaskParams(0.3, 0.3, 0.5, 0.5))) == 1
    # Equal parameters make the state swap the identity but not the flip.
    assert len(symmetry_orbit(TaskParams(0.3, 0.3, 0.3, 0.3))) == 2


def test_symmetry_transforms_preserve_observation_law():
    rng = np.random.default_rng(21)
    for _ in range(8):
        p = random_params(rng)
        obs = (rng.random(8) < 0.5).astype(np.int64)
        flipped = 1 - obs
        base = log_likelihood(p, obs)
        # Relabeling the hidden states leaves the observation law unchanged.
        assert log_likelihood(_state_swap(p), obs) == pytest.approx(base, abs=1e-12)
        # Flipping both emissions is the same as flipping the observed bits.
        assert log_likelihood(_emission_flip(p), flipped) == pytest.approx(
            base, abs=1e-12)


def test_sym_distance_is_zero_exactly_on_orbits():
    rng = np.random.default_rng(13)
    p = random_params(rng)
    for q in symmetry_orbit(p):
        assert sym_distance(p, q) == pytest.approx(0.0, abs=1e-12)
    nearby = TaskParams(p.p1, p.p2, p.r1, min(1.0, p.r2 + 0.05))
    assert sym_distance(p, nearby) > 0


def test_sym_distance_is_symmetric():
    rng = np.random.default_rng(17)
    for _ in range(10):
        a, b = random_params(rng), random_params(rng)
        assert sym_distance(a, b) == pytest.approx(sym_distance(b, a), abs=1e-12)


def test_sym_distance_frozen_example():
    # Orbit of (1,1,1,1) contains its emission flip (1,1,0,0), which sits at
    # Euclidean distance sqrt(2) from (0,0,0,0); no group element gets closer.
    a = TaskParams(0.0, 0.0, 0.0, 0.0)
    b = TaskParams(1.0, 1.0, 1.0, 1.0)
    assert sym_distance(a, b) == pytest.approx(math.sqrt(2.0), abs=1e-12)


# -- likelihood ----------------------------------------------------------------


def test_log_likelihood_matches_path_enumeration():
    rng = np.random.default_rng(29)
    for _ in range(20):
        p = random_params(rng)
        obs = (rng.random(8) < 0.5).astype(np.int64)
        assert log_likelihood(p, obs) == pytest.approx(
            brute_force_log_likelihood(p, obs), abs=1e-10)


def test_log_likelihood_impossible_sequence():
    # Both emissions are deterministic zeros, so observing a one is impossible.
    p = TaskParams(0.5, 0.5, 0.0, 0.0)
    assert log_likelihood(p, [0, 1, 0]) == float("-inf")


def test_log_likelihood_iid_fair_sequence():
    p = TaskParams(0.5, 0.5, 0.0, 1.0)
    obs = [0, 1, 1, 0, 1]
    assert log_likelihood(p, obs) == pytest.approx(5 * math.log(0.5), abs=1e-12)
