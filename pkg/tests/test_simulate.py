import math

import numpy as np
import pytest
from scipy.linalg import expm

from consensus_forge._kernels_py import rk4_step
from consensus_forge.model import AgentDynamics, MatrixWeightedDigraph, find_spanning_tree, validate_system
from consensus_forge.reduction import closed_loop_matrix
from consensus_forge.simulate import (
    SimulationConfig,
    SimulationError,
    SimulationTrace,
    consensus_verdict,
    simulate,
    stacked_equivalence,
    y_trajectory,
)
from consensus_forge.synthesis import GainSet
from instances import consensus_instance, example_sim, example_system, example_tree, gains_ex1


def scalar_decay(t_end=1.0, dt=1e-3):
    """Leader x' = -x from 1 with one follower tied to it."""
    agents = [AgentDynamics([[-1.0]], [[0.0]]), AgentDynamics([[-1.0]], [[1.0]])]
    s = validate_system(agents, MatrixWeightedDigraph(2, {(0, 1): [[1.0]]}))
    gains = GainSet([[[0.0]]], [[[1.0]]])
    cfg = SimulationConfig([[1.0], [0.0]], t_end=t_end, dt=dt)
    return s, find_spanning_tree(s.graph), gains, cfg


def test_rk4_step_exponential():
    x = np.array([1.0])
    for k in range(1000):
        x = rk4_step(lambda v, t: -v, x, k * 1e-3, 1e-3)
    assert abs(x[0] - math.exp(-1)) < 1e-12


def test_rk4_step_matches_taylor():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    x = rng.normal(size=3)
    h = 0.05
    taylor = sum(np.linalg.matrix_power(h * A, k) @ x / math.factorial(k) for k in range(5))
    np.testing.assert_allclose(rk4_step(lambda v, t: A @ v, x, 0.0, h), taylor, atol=1e-14)


def test_rk4_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        rk4_step(lambda v, t: v * np.inf, np.ones(1), 0.0, 0.1)


def test_simulated_leader_decay():
    s, tree, gains, cfg = scalar_decay()
    tr = simulate(s, tree, gains, "dst", cfg)
    assert tr.times[-1] == pytest.approx(1.0)
    assert abs(tr.states[-1, 0, 0] - math.exp(-1)) < 1e-6


def test_follower_error_closed_form():
    # e = x1 - x0 obeys e' = -2e with |e(0)| = 1
    s, tree, gains, cfg = scalar_decay()
    tr = simulate(s, tree, gains, "dst", cfg)
    expected = np.exp(-2 * tr.times)
    np.testing.assert_allclose(tr.errors[:, 0], expected, atol=1e-10)


def test_linear_run_matches_expm():
    s = example_system()
    tree = example_tree(s)
    cfg = example_sim(t_end=0.5)
    tr = simulate(s, tree, gains_ex1(), "dst", cfg)
    cl = closed_loop_matrix(s, tree, gains_ex1())
    order = (0,) + tree.label_order
    z0 = np.concatenate([cfg.initial_states[k] for k in order])
    z = (expm(cl.F * 0.5) @ z0).reshape(-1, 2)[np.argsort(order)]
    np.testing.assert_allclose(tr.states[-1], z, rtol=1e-9, atol=1e-9)


def test_stacked_equivalence_examples():
    s = example_system()
    tree = example_tree(s)
    cfg = example_sim(t_end=2.0)
    assert stacked_equivalence(s, tree, gains_ex1(), "dst", cfg) < 1e-8
    assert stacked_equivalence(s, tree, gains_ex1(), "all-neighbors", cfg) < 1e-8


def test_constant_leader_input():
    d = consensus_instance(2)
    assert d["kind"] == "driven-leader"
    tr = simulate(d["system"], d["tree"], d["gains"], "dst", d["sim"])
    assert stacked_equivalence(d["system"], d["tree"], d["gains"], "dst", d["sim"], tr) < 1e-8


def test_divergence_guard_stops_run():
    s = example_system()
    cfg = example_sim(t_end=10.0, divergence_guard=1e6)
    tr = simulate(s, example_tree(s), gains_ex1(), "dst", cfg)
    assert tr.diverged
    assert tr.times[-1] < 10.0
    assert np.abs(tr.states[-1]).max() > 1e6
    assert np.abs(tr.states[-2]).max() <= 1e6
    assert not consensus_verdict(tr).achieved


def test_config_errors():
    s, tree, gains, _ = scalar_decay()
    with pytest.raises(SimulationError):
        SimulationConfig([[1.0], [0.0]], dt=0.0)
    with pytest.raises(SimulationError):
        SimulationConfig([[1.0], [0.0]], t_end=1e-4, dt=1e-3)
    with pytest.raises(SimulationError):
        simulate(s, tree, gains, "dst", SimulationConfig([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SimulationError):
        simulate(s, tree, gains, "dst", SimulationConfig([[1.0], [0.0]], leader_input=[1.0, 2.0]))
    with pytest.raises(SimulationError):
        simulate(s, tree, gains, "ring", SimulationConfig([[1.0], [0.0]]))


def test_consensus_verdict_window():
    t = np.arange(0, 10.001, 0.5)
    states = np.zeros((t.size, 2, 1))
    states[:, 1, 0] = np.where(t < 7.0, 1.0, 1e-5)
    v = consensus_verdict(SimulationTrace(t, states), epsilon=1e-3, window=2.0)
    assert v.achieved and v.t_settle == 7.0
    v = consensus_verdict(SimulationTrace(t, states), epsilon=1e-3, window=4.0)
    assert not v.achieved and v.t_settle == 7.0


def test_y_trajectory_sign():
    s = example_system()
    tree = example_tree(s)
    tr = simulate(s, tree, gains_ex1(), "dst", example_sim(t_end=0.01))
    y = y_trajectory(tr, tree)
    # y_3 = x_2 - x_3 at t = 0
    np.testing.assert_array_equal(y[0, 2], np.array([1.0, 0]) - np.array([1.5, 0]))


def test_empty_trace():
    tr = SimulationTrace.empty(3)
    assert tr.errors.shape == (0, 3)
    assert not consensus_verdict(tr).achieved
