"""Cart-pole dynamics, returns, and the state-set file format."""

import numpy as np
import pytest

from fedhpd.env import (
    EnvSpec,
    PublicStateSet,
    THETA_THRESHOLD,
    Trajectory,
    Transition,
    discounted_return,
    is_terminal,
    load_state_set,
    reset,
    save_state_set,
    step,
)
from fedhpd.errors import ArtifactIOError, ConfigurationError

DISCRETE = EnvSpec("cartpole-discrete")
CONTINUOUS = EnvSpec("cartpole-continuous")


def test_reset_is_reproducible_and_bounded():
    a = reset(DISCRETE, np.random.default_rng(123))
    b = reset(DISCRETE, np.random.default_rng(123))
    assert np.array_equal(a, b)
    draws = np.array([reset(DISCRETE, np.random.default_rng(i)) for i in range(200)])
    assert np.all(np.abs(draws) <= 0.05)


def test_reset_mean_is_centered():
    rng = np.random.default_rng(7)
    draws = np.array([reset(DISCRETE, rng) for _ in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0)) < 0.002)


def test_upright_equilibrium_is_stationary():
    state = np.zeros(4)
    next_state, reward, done = step(CONTINUOUS, state, np.array([0.0]))
    assert np.array_equal(next_state, np.zeros(4))
    assert reward == 1.0
    assert not done


def test_single_step_from_rest_matches_hand_computation():
    # independent re-derivation of one +10 N tick from the equations of motion
    force, g, m_c, m_p, l, dt = 10.0, 9.8, 1.0, 0.1, 0.5, 0.02
    total = m_c + m_p
    temp = force / total
    theta_acc = (g * 0.0 - 1.0 * temp) / (l * (4.0 / 3.0 - m_p / total))
    x_acc = temp - m_p * l * theta_acc / total
    x_dot = dt * x_acc
    x = dt * x_dot
    theta_dot = dt * theta_acc
    theta = dt * theta_dot

    next_state, reward, done = step(DISCRETE, np.zeros(4), 1)
    np.testing.assert_allclose(next_state, [x, x_dot, theta, theta_dot], rtol=1e-14)
    assert reward == 1.0 and not done


def test_step_is_deterministic():
    state = np.array([0.01, -0.3, 0.05, 0.2])
    a = step(DISCRETE, state, 0)[0]
    b = step(DISCRETE, state, 0)[0]
    assert np.array_equal(a, b)


def test_angle_threshold_terminates():
    state = np.array([0.0, 0.0, THETA_THRESHOLD * 0.999, 3.0])
    next_state, reward, done = step(DISCRETE, state, 1)
    assert done
    assert reward == 1.0  # incoming state was still alive
    # stepping again from a terminal state pays nothing
    _, reward2, _ = step(DISCRETE, next_state, 1)
    assert reward2 == 0.0


def test_continuous_force_is_clamped():
    big = step(CONTINUOUS, np.zeros(4), np.array([1000.0]))[0]
    capped = step(CONTINUOUS, np.zeros(4), np.array([10.0]))[0]
    assert np.array_equal(big, capped)


def test_discrete_rejects_bad_action():
    with pytest.raises(ConfigurationError):
        step(DISCRETE, np.zeros(4), 2)


def make_traj(rewards):
    traj = Trajectory()
    state = np.zeros(4)
    for i, r in enumerate(rewards):
        nxt = state + 0.01
        traj.append(Transition(state, 0, r, nxt, i == len(rewards) - 1))
        state = nxt
    return traj


def test_discounted_return_values():
    assert discounted_return(make_traj([3.0, 7.0, 9.0]), 0.0) == 3.0
    assert discounted_return(make_traj([1.0, 1.0, 1.0]), 0.5) == 1.75
    for length in (1, 17, 400):
        got = discounted_return(make_traj([1.0] * length), 0.99)
        geometric = (1.0 - 0.99**length) / 0.01
        assert abs(got - geometric) < 1e-9


def test_trajectory_contiguity_guard():
    traj = make_traj([1.0, 1.0])
    with pytest.raises(ConfigurationError):
        traj.append(Transition(np.zeros(4), 0, 1.0, np.zeros(4), False))


def test_return_under_gamma_one_equals_length():
    traj = make_traj([1.0] * 23)
    assert discounted_return(traj, 1.0 - 1e-300) == pytest.approx(23.0)
    assert traj.undiscounted_return() == 23.0


def test_state_set_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    original = PublicStateSet(rng.normal(size=(50, 4)))
    path = tmp_path / "states.txt"
    save_state_set(original, path)
    loaded = load_state_set(path)
    assert np.array_equal(loaded.states, original.states)
    # a second write of the loaded set produces identical bytes
    path2 = tmp_path / "states2.txt"
    save_state_set(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_state_set_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a header\n1,2,3,4\n")
    with pytest.raises(ArtifactIOError):
        load_state_set(path)


def test_state_set_shape_validation():
    with pytest.raises(ConfigurationError):
        PublicStateSet(np.zeros((3, 5)))
    with pytest.raises(ConfigurationError):
        PublicStateSet(np.zeros((0, 4)))


def test_is_terminal_thresholds():
    assert not is_terminal(np.array([2.39, 0, 0, 0]))
    assert is_terminal(np.array([2.41, 0, 0, 0]))
    assert is_terminal(np.array([0, 0, THETA_THRESHOLD + 1e-6, 0]))
