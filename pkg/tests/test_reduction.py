import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import spectra_distance
from consensus_forge.model import SpanningTree
from consensus_forge.synthesis import GainSet
from consensus_forge.reduction import (
    auxiliary_matrix,
    closed_loop_matrix,
    extract_L1,
    extract_L3,
    is_hurwitz,
    leader_drift,
    observability_sequence,
    path_inverse,
    rank_tolerance,
    reduce_system,
    transform,
    transformation_matrices,
)
from instances import consensus_instance, example_system, example_tree, gains_ex1, gains_ex3


@pytest.fixture(scope="module")
def ex1():
    s = example_system()
    t = example_tree(s)
    return s, t, gains_ex1()


def test_path_inverse_chain():
    tree = SpanningTree({1: 0, 2: 1, 3: 2}, (1, 2, 3))
    np.testing.assert_array_equal(path_inverse(tree), -np.tril(np.ones((3, 3))))


def test_transformation_inverse_matches_numeric(ex1):
    _, tree, _ = ex1
    P, P_inv = transformation_matrices(tree, 2)
    np.testing.assert_allclose(P_inv, np.linalg.inv(P), atol=1e-12)
    np.testing.assert_allclose(P @ P_inv, np.eye(10), atol=1e-12)


def test_closed_loop_block1(ex1):
    s, tree, g = ex1
    cl = closed_loop_matrix(s, tree, g)
    # hand arithmetic: A1 - B1 G1 - B1 K1 D1
    np.testing.assert_allclose(cl.M[:2, :2], [[-3, -5.6], [1, 1.2]], atol=1e-12)
    np.testing.assert_allclose(cl.F[:2, :2], [[2, 0], [0, 4]])


def test_ahat_row_identity_and_bhat(ex1):
    s, tree, g = ex1
    parts = transform(closed_loop_matrix(s, tree, g), tree)
    np.testing.assert_allclose(parts["Ahat"], leader_drift(s, tree, g), atol=1e-9)
    # rows of followers 1 and 2 (leader-rooted) carry B0, the others nothing
    np.testing.assert_array_equal(parts["Bhat"].ravel(), [1, 1, 1, 1, 0, 0, 0, 0])


def test_leader_drift_cancels_for_identical_agents():
    d = consensus_instance(1)
    assert d["kind"] == "homogeneous"
    red = reduce_system(d["system"], d["tree"], d["gains"])
    assert not np.any(red.Bbar)
    assert red.h == 0 and red.s == 0
    assert red.Mbar.shape == red.Abar.shape


def test_example1_reduction(ex1):
    s, tree, g = ex1
    red = reduce_system(s, tree, g)
    assert red.h == 3
    np.testing.assert_allclose(red.L1 @ red.L3, np.eye(3), atol=1e-10)
    # h = n + m makes the tail similar to Dbar = [[A0, B0], [0, 0]]
    assert spectra_distance(np.linalg.eigvals(red.tail), [2, 4, 0]) < 1e-8
    assert spectra_distance(np.linalg.eigvals(red.Abar), np.linalg.eigvals(red.closed_loop.M)) < 1e-8


def test_observability_degenerate():
    obs = observability_sequence(np.zeros((4, 3)), np.eye(3))
    assert (obs["s"], obs["h"]) == (0, 0)
    assert obs["Vs"].size == 0 or not np.any(obs["Vs"])


def test_observability_full():
    obs = observability_sequence(np.eye(3), np.arange(9.0).reshape(3, 3))
    assert (obs["s"], obs["h"]) == (0, 3)


def test_observability_chain():
    # (B, D) = ([1 0], shift): rank grows to 2 at s = 1
    obs = observability_sequence(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert (obs["s"], obs["h"]) == (0, 1)
    obs = observability_sequence(np.array([[0.0, 1.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert (obs["s"], obs["h"]) == (1, 2)


def test_extract_L1_rowscan():
    V = np.array([[1.0, 0], [2, 0], [0, 1]])
    np.testing.assert_array_equal(extract_L1(V, 2, rank_tolerance(V)), [[1, 0], [0, 1]])
    assert extract_L1(np.zeros((3, 2)), 0, 0.0).shape == (0, 2)
    F = np.array([[1.0, 2, 3], [0, 1, 4]])
    np.testing.assert_array_equal(extract_L1(F, 2, rank_tolerance(F)), F)


def test_extract_L3_examples():
    L3, cols = extract_L3(np.array([[0.0, 2.0, 0.0]]))
    np.testing.assert_allclose(L3, [[0], [0.5], [0]])
    assert list(cols) == [1]
    L3, _ = extract_L3(np.eye(3))
    np.testing.assert_array_equal(L3, np.eye(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_extract_L3_random(seed):
    rng = np.random.default_rng(seed)
    L1 = rng.normal(size=(2, 3))
    L3, _ = extract_L3(L1)
    np.testing.assert_allclose(L1 @ L3, np.eye(2), atol=1e-10)


def test_auxiliary_matrix_empty_tail():
    Abar = np.diag([-1.0, -2.0])
    Mbar = auxiliary_matrix(Abar, np.zeros((2, 3)), np.eye(3), np.zeros((0, 3)), np.zeros((3, 0)))
    np.testing.assert_array_equal(Mbar, Abar)


@pytest.mark.parametrize("H, verdict, absc", [
    (np.diag([-1.0, -2.0]), True, -1.0),
    (np.diag([2.0, 4.0]), False, 4.0),
    (np.array([[-3, -5.6], [1, 1.2]]), True, -0.9),
    (np.diag([0.0, -1.0]), False, 0.0),
])
def test_is_hurwitz(H, verdict, absc):
    r = is_hurwitz(H)
    assert r.verdict is verdict
    assert r.spectral_abscissa == pytest.approx(absc, abs=1e-12)


def test_is_hurwitz_margin_and_empty():
    assert not is_hurwitz(np.array([[-1e-10]])).verdict
    assert is_hurwitz(np.array([[-1e-10]]), margin=0.0).verdict
    r = is_hurwitz(np.zeros((0, 0)))
    assert r.verdict and r.spectral_abscissa == -np.inf
    assert r.to_dict()["spectral_abscissa"] is None


def test_all_neighbors_reduction_example3():
    s = example_system()
    tree = example_tree(s)
    red = reduce_system(s, tree, gains_ex3(), "all-neighbors")
    assert spectra_distance(np.linalg.eigvals(red.Abar), np.linalg.eigvals(red.closed_loop.M)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["dst", "all-neighbors"]))
def test_spectral_identities_random(seed, kind):
    # generic gains keep the spectrum simple; designed gains repeat poles
    # across agents, where eigenvalues are only accurate to ~sqrt(eps)
    d = consensus_instance(seed)
    rng = np.random.default_rng(seed)
    N, n, m = d["system"].N, d["system"].n, d["system"].m
    gains = GainSet([rng.normal(size=(m, n)) for _ in range(N)], [rng.normal(size=(m, n)) for _ in range(N)])
    red = reduce_system(d["system"], d["tree"], gains, kind)
    M = red.closed_loop.M
    scale = 1 + np.abs(np.linalg.eigvals(M)).max()
    assert spectra_distance(np.linalg.eigvals(red.Abar), np.linalg.eigvals(M)) < 1e-8 * scale
    union = np.concatenate([np.linalg.eigvals(red.Abar), np.linalg.eigvals(red.tail)])
    assert spectra_distance(np.linalg.eigvals(red.Mbar), union) < 1e-8 * scale
    np.testing.assert_allclose(red.L1 @ red.L3, np.eye(red.h), atol=1e-10)
    P, P_inv = transformation_matrices(d["tree"], d["system"].n)
    np.testing.assert_allclose(P @ P_inv, np.eye(P.shape[0]), atol=1e-12)


def test_cluster_centroids_jordan_pair():
    from conftest import cluster_centroids

    J = np.array([[-1.0, 1.0], [1e-15, -1.0]])
    eig = np.linalg.eigvals(J)
    assert np.abs(eig + 1).max() > 1e-9
    np.testing.assert_allclose(cluster_centroids(eig, 1e-6), [-1, -1], atol=1e-14)
    np.testing.assert_array_equal(cluster_centroids([1.0, 2.0], 1e-6), [1.0, 2.0])
