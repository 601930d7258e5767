import numpy as np
import pytest

from qosdeploy.consensus import (
    ConsensusInput,
    ConsensusState,
    consensus_step,
    run_consensus,
    run_consensus_batch,
)
from qosdeploy.exceptions import NumericalError
from qosdeploy.network import Graph


def scalar_input(eta, r):
    return ConsensusInput(eta=eta, r=np.array([float(r)]))


def test_step_isolated_active_fixed_point():
    # With z = 0, v = 0 the output equals the reference immediately and no
    # correction term fires.
    state = ConsensusState.zeros(1)
    out = consensus_step(state, scalar_input(1.0, 3.25), [], [], delta_c=0.1)
    assert out.y[0] == 3.25
    assert out.z[0] == 0.0
    assert out.v[0] == 0.0


def test_step_passive_isolated_identity():
    state = ConsensusState(y=np.zeros(2), z=np.array([1.5, -2.0]), v=np.array([0.3, 0.4]))
    out = consensus_step(state, ConsensusInput.passive(2), [], [], delta_c=0.1)
    assert np.array_equal(out.y, state.z)
    assert np.array_equal(out.z, state.z)
    assert np.array_equal(out.v, state.v)


def test_step_two_node_three_rounds_hand_iterated():
    # Oracle: the three update equations iterated by hand for the pair
    # eta = (1, 1), r = (0, 2), delta_c = 0.1, zero initial states.
    #   l=1: y = (0, 2),       z -> (0.2, -0.2),     v -> (-0.2, 0.2)
    #   l=2: y = (0.2, 1.8),   z -> (0.38, -0.38),   v -> (-0.36, 0.36)
    #   l=3: y = (0.38, 1.62), z -> (0.538, -0.538), v -> (-0.484, 0.484)
    g = Graph.complete(2)
    inputs = [scalar_input(1.0, 0.0), scalar_input(1.0, 2.0)]
    states = run_consensus(g, inputs, n_rounds=3, delta_c=0.1, normalize_weights=False)
    assert states[0].y[0] == pytest.approx(0.38, abs=1e-12)
    assert states[1].y[0] == pytest.approx(1.62, abs=1e-12)
    assert states[0].z[0] == pytest.approx(0.538, abs=1e-12)
    assert states[1].z[0] == pytest.approx(-0.538, abs=1e-12)
    assert states[0].v[0] == pytest.approx(-0.484, abs=1e-12)
    assert states[1].v[0] == pytest.approx(0.484, abs=1e-12)


def test_step_dimension_mismatch():
    state = ConsensusState.zeros(2)
    with pytest.raises(ValueError):
        consensus_step(state, scalar_input(1.0, 0.0), [], [], delta_c=0.1)
    with pytest.raises(ValueError):
        consensus_step(state, ConsensusInput.passive(2), [np.zeros(3)], [np.zeros(3)], delta_c=0.1)


def test_single_active_agent_dominates():
    g = Graph.complete(2)
    inputs = [scalar_input(2.0, 5.0), ConsensusInput.passive(1)]
    states = run_consensus(g, inputs, n_rounds=800, delta_c=0.05)
    for st in states:
        assert st.y[0] == pytest.approx(5.0, abs=1e-9)


def test_ring6_demo_weights_track_weighted_mean():
    g = Graph.ring(6)
    rng = np.random.default_rng(11)
    eta = np.array([100.0, 250.0, 450.0, 0.0, 0.0, 200.0])
    r = rng.normal(size=6) * 10
    r[eta == 0] = 0.0
    target = float((eta * r).sum() / eta.sum())
    inputs = [scalar_input(e, ri) for e, ri in zip(eta, r)]
    states = run_consensus(g, inputs, n_rounds=2000, delta_c=0.05)
    for st in states:
        assert abs(st.y[0] - target) < 1e-6


def test_constant_reference_consensus_is_exact_from_zero_init():
    g = Graph.ring(5)
    c = np.array([0.7, -1.3])
    inputs = [ConsensusInput(eta=1.0, r=c) for _ in range(5)]
    states = run_consensus(g, inputs, n_rounds=4, delta_c=0.05)
    for st in states:
        assert np.allclose(st.y, c, atol=1e-15)


def test_static_convergence_and_agreement_random_instances():
    rng = np.random.default_rng(42)
    for trial in range(5):
        n = int(rng.integers(3, 11))
        g = Graph.ring(n)
        eta = rng.uniform(0.0, 2.0, n)
        eta[0] = max(eta[0], 0.5)
        r = rng.normal(size=(n, 2)) * 3
        r[eta == 0] = 0.0
        target = (eta[:, None] * r).sum(axis=0) / eta.sum()
        inputs = [ConsensusInput(eta=e, r=ri) for e, ri in zip(eta, r)]
        states = run_consensus(g, inputs, n_rounds=2000, delta_c=0.05)
        ys = np.stack([st.y for st in states])
        assert np.max(np.abs(ys - target)) < 1e-6
        spread = np.max(np.abs(ys[:, None, :] - ys[None, :, :]))
        assert spread < 1e-6


def test_permutation_equivariance_under_ring_rotation():
    n = 6
    g = Graph.ring(n)
    rng = np.random.default_rng(5)
    eta = rng.uniform(0.0, 2.0, n)
    r = rng.normal(size=(n, 1))
    inputs = [ConsensusInput(eta=e, r=ri) for e, ri in zip(eta, r)]
    states = run_consensus(g, inputs, n_rounds=50, delta_c=0.05)

    # Rotating node labels by one step is an automorphism of the ring.
    perm = [(i + 1) % n for i in range(n)]
    inputs_p = [inputs[perm[i]] for i in range(n)]
    states_p = run_consensus(g, inputs_p, n_rounds=50, delta_c=0.05)
    for i in range(n):
        assert np.allclose(states_p[i].y, states[perm[i]].y, atol=1e-14)


def test_warm_start_continues_the_run():
    g = Graph.ring(4)
    rng = np.random.default_rng(9)
    inputs = [scalar_input(e, r) for e, r in zip(rng.uniform(0.5, 2, 4), rng.normal(size=4))]
    full = run_consensus(g, inputs, n_rounds=60, delta_c=0.05)
    half = run_consensus(g, inputs, n_rounds=30, delta_c=0.05)
    resumed = run_consensus(
        g, inputs, init=[(st.z, st.v) for st in half], n_rounds=30, delta_c=0.05
    )
    for a, b in zip(full, resumed):
        assert np.allclose(a.y, b.y, atol=1e-14)
        assert np.allclose(a.z, b.z, atol=1e-14)
        assert np.allclose(a.v, b.v, atol=1e-14)


def test_all_passive_rejected():
    g = Graph.complete(2)
    with pytest.raises(ValueError, match="all-passive"):
        run_consensus(g, [ConsensusInput.passive(1)] * 2, n_rounds=5)


def test_disconnected_graph_rejected():
    g = Graph.edgeless(2)
    with pytest.raises(ValueError, match="connected"):
        run_consensus(g, [scalar_input(1, 1), scalar_input(1, 2)], n_rounds=5)


def test_divergence_guard_trips():
    g = Graph.complete(2)
    inputs = [scalar_input(1.0, 0.0), scalar_input(1.0, 2.0)]
    with pytest.raises(NumericalError, match="diverged"):
        run_consensus(g, inputs, n_rounds=500, delta_c=5.0)


def test_batch_matches_per_node_runs():
    g = Graph.ring(5)
    rng = np.random.default_rng(17)
    n_streams, dim = 3, 2
    eta = rng.uniform(0, 3, size=(5, n_streams))
    eta[0] = np.maximum(eta[0], 0.1)
    refs = rng.normal(size=(5, n_streams, dim))
    z0 = np.zeros_like(refs)
    v0 = np.zeros_like(refs)
    y, z, v = run_consensus_batch(g.adj, eta, refs, z0, v0, n_rounds=40, delta_c=0.05)

    for s in range(n_streams):
        inputs = [ConsensusInput(eta=eta[i, s], r=refs[i, s]) for i in range(5)]
        states = run_consensus(g, inputs, n_rounds=40, delta_c=0.05)
        for i in range(5):
            assert np.allclose(states[i].y, y[i, s], atol=1e-12)
            assert np.allclose(states[i].z, z[i, s], atol=1e-12)
            assert np.allclose(states[i].v, v[i, s], atol=1e-12)


def test_batch_skips_dead_streams():
    g = Graph.ring(4)
    eta = np.zeros((4, 2))
    eta[:, 1] = 1.0
    refs = np.ones((4, 2, 1))
    z0 = np.zeros_like(refs)
    v0 = np.zeros_like(refs)
    y, z, v = run_consensus_batch(g.adj, eta, refs, z0, v0, n_rounds=10)
    assert np.all(np.isnan(y[:, 0]))
    assert np.all(z[:, 0] == 0)
    assert np.allclose(y[:, 1], 1.0, atol=1e-12)


def test_trace_shape():
    g = Graph.ring(3)
    inputs = [scalar_input(1, 1), scalar_input(1, 2), scalar_input(1, 3)]
    states, trace = run_consensus(g, inputs, n_rounds=7, delta_c=0.05, return_trace=True)
    assert trace.shape == (7, 3, 1)
    assert np.allclose(trace[-1], np.stack([st.y for st in states]))
