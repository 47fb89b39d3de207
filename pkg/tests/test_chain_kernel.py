import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcpotential.chain_kernel import (
    ChainPath,
    circular_nn_generator,
    matrix_exp,
    rng_stream,
    simulate_observed,
    simulate_path,
    stationary_distribution,
    transition_matrix,
    validate_intensity,
)
from mcpotential.errors import NegativeRate, NonFinite, RowSumViolation, ValidationError
from mcpotential.scenarios import random_generator

from conftest import eig_expm


def test_validate_accepts_trivial_generators():
    assert validate_intensity([[0.0]]).n == 1
    q = validate_intensity([[-1.0, 1.0], [1.0, -1.0]])
    assert q.n == 2
    assert np.array_equal(q.exit_rates, [1.0, 1.0])


def test_validate_rejects_bad_generators():
    with pytest.raises(RowSumViolation):
        validate_intensity([[-1.0, 0.5], [1.0, -1.0]])
    with pytest.raises(NegativeRate):
        validate_intensity([[1.0, -1.0], [1.0, -1.0]])
    with pytest.raises(NonFinite):
        validate_intensity([[np.nan, 0.0], [0.0, 0.0]])
    with pytest.raises(ValidationError):
        validate_intensity([[0.0, 0.0]])


def test_validated_matrix_is_read_only():
    q = validate_intensity([[-1.0, 1.0], [1.0, -1.0]])
    with pytest.raises(ValueError):
        q.q[0, 0] = 5.0


def test_circular_generator_shapes():
    q = circular_nn_generator([1, 1, 1], [0, 0, 0])
    np.testing.assert_array_equal(q.q, [[-1, 1, 0], [0, -1, 1], [1, 0, -1]])
    # both neighbours coincide on a 2-cycle
    q2 = circular_nn_generator([2.0, 3.0], [0.5, 0.25])
    assert q2.q[0, 1] == 2.5 and q2.q[1, 0] == 3.25
    q5 = circular_nn_generator([0.5] * 5, [0.5] * 5)
    assert np.allclose(q5.q.sum(axis=1), 0.0, atol=1e-12)
    with pytest.raises(NegativeRate):
        circular_nn_generator([1, -1, 1], [1, 1, 1])


def test_matrix_exp_trivial_cases():
    m = np.array([[-1.0, 1.0], [1.0, -1.0]])
    np.testing.assert_array_equal(matrix_exp(m, 0.0), np.eye(2))
    for t in (0.01, 0.7, 3.0, 40.0):
        e = math.exp(-2 * t)
        want = np.array([[1 + e, 1 - e], [1 - e, 1 + e]]) / 2
        np.testing.assert_allclose(matrix_exp(m, t), want, rtol=1e-13, atol=1e-15)
    with pytest.raises(NonFinite):
        matrix_exp([[np.inf]])


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 10), seed=st.integers(0, 2**32 - 1), t=st.floats(1e-3, 30.0))
def test_matrix_exp_matches_eigen_oracle(n, seed, t):
    rng = np.random.default_rng(seed)
    q = random_generator(rng, n).q - np.diag(rng.uniform(0, 0.1, n))
    got = matrix_exp(q, t)
    want = eig_expm(q, t)
    scale = np.abs(want).max()
    assert np.abs(got - want).max() <= 1e-10 * scale


def test_transition_matrix_properties():
    q = validate_intensity([[-1.0, 1.0], [1.0, -1.0]])
    np.testing.assert_array_equal(transition_matrix(q, 0.0), np.eye(2))
    p = transition_matrix(q, math.log(2) / 2)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    ring = circular_nn_generator([6, 4, 7, 5, 6], [4, 6, 5, 7, 4])
    np.testing.assert_allclose(transition_matrix(ring, 1 / 252), eig_expm(ring.q, 1 / 252),
                               rtol=1e-10, atol=1e-14)
    with pytest.raises(ValidationError):
        transition_matrix(q, -1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.floats(0.0, 50.0), t=st.floats(0.0, 50.0))
def test_chapman_kolmogorov_and_stochasticity(seed, s, t):
    q = random_generator(np.random.default_rng(seed), 4)
    ps, pt, pst = transition_matrix(q, s), transition_matrix(q, t), transition_matrix(q, s + t)
    for p in (ps, pt, pst):
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p >= 0)
    np.testing.assert_allclose(ps @ pt, pst, atol=1e-9)


def test_rng_streams_are_keyed():
    a = rng_stream(5, 1, 2).random(4)
    np.testing.assert_array_equal(a, rng_stream(5, 1, 2).random(4))
    assert not np.array_equal(a, rng_stream(5, 2, 1).random(4))
    assert not np.array_equal(a, rng_stream(6, 1, 2).random(4))


def test_simulate_path_trivial():
    one = simulate_path(validate_intensity([[0.0]]), 0, 10.0, seed=1)
    assert one.jump_times == () and one.state_at(5.0) == 0
    q = validate_intensity([[-1.0, 1.0], [1.0, -1.0]])
    still = simulate_path(q, 1, 0.0, seed=1)
    assert still.jump_times == () and still.state_at(0.0) == 1
    with pytest.raises(ValidationError):
        simulate_path(q, 2, 1.0, seed=1)


def test_simulate_path_structure_and_rate():
    q = validate_intensity([[-1.0, 1.0], [1.0, -1.0]])
    path = simulate_path(q, 0, 1000.0, seed=42)
    times = np.array(path.jump_times)
    assert np.all(np.diff(times) > 0) and times[0] > 0 and times[-1] <= 1000.0
    states = (path.initial_state,) + path.jump_states
    assert all(a != b for a, b in zip(states[:-1], states[1:]))
    rate = len(times) / 1000.0
    assert abs(rate - 1.0) <= 3 * math.sqrt(1000) / 1000
    assert simulate_path(q, 0, 1000.0, seed=42) == path


def test_occupation_converges_to_stationary():
    q = validate_intensity([[-2.0, 2.0], [1.0, -1.0]])
    pi = stationary_distribution(q)
    np.testing.assert_allclose(pi, [1 / 3, 2 / 3], atol=1e-12)
    horizon = 5000.0
    occ = simulate_path(q, 0, horizon, seed=3).occupation_times(2) / horizon
    # renewal-theory variance of the time fraction for a 2-state chain
    a, b = 2.0, 1.0
    sd = math.sqrt(2 * a * b / (a + b) ** 3 / horizon)
    assert abs(occ[0] - pi[0]) < 4 * sd


def test_chain_path_lookup():
    p = ChainPath(0, (0.5, 1.5), (2, 1), 3.0)
    assert [p.state_at(t) for t in (0.0, 0.49, 0.5, 1.0, 1.5, 2.9)] == [0, 0, 2, 2, 1, 1]
    np.testing.assert_allclose(p.occupation_times(3), [0.5, 1.5, 1.0])


def test_simulate_observed_matches_transition_probabilities():
    q = circular_nn_generator([1.0, 2.0, 0.5], [0.5, 1.0, 1.5])
    times = [0.3, 1.0]
    n = 40_000
    states, integrals = simulate_observed(q, 0, times, n, rng_stream(9))
    for k, t in enumerate(times):
        p = transition_matrix(q, t)[0]
        freq = np.bincount(states[:, k], minlength=3) / n
        assert np.all(np.abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n))
    assert np.all(integrals == 0.0)


def test_simulate_observed_integral_is_exact_for_constant_alpha():
    q = circular_nn_generator([1.0, 1.0], [0.0, 0.0])
    _, integrals = simulate_observed(q, 0, [0.5, 2.0], 50, rng_stream(1), alpha=[0.03, 0.03])
    np.testing.assert_allclose(integrals, np.tile([0.015, 0.06], (50, 1)), rtol=1e-12)
