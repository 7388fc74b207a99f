import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trophic import dynamics as dyn
from trophic.blocksparse import BlockLayout, BlockSparseMatrix, random_block_sparse, to_dense
from trophic.dynamics import DynamicsParams, NetworkState

M64 = (1 << 64) - 1


# Independent integer-arithmetic oracle for the counter-based noise.
def _mix(z):
    z = (z + 0x9E3779B97F4A7C15) & M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def _rotl(z, r):
    return ((z << r) | (z >> (64 - r))) & M64


def noise_oracle(seed, step, index, sigma):
    key = _mix(seed ^ _rotl(_mix(step ^ 0xD1B54A32D192ED03), 17))
    h = _mix(key ^ _rotl(_mix(index ^ 0x8CB92BA72F3D8DD7), 31))
    u1 = ((_mix(h ^ 0x2545F4914F6CDD1D) >> 11) + 0.5) / 2.0**53
    u2 = ((_mix(h ^ 0x61C8864680B583EB) >> 11) + 0.5) / 2.0**53
    return sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def single_neuron():
    return BlockSparseMatrix(BlockLayout(1, 1, 1)), np.zeros((1, 1))


# -- step ---------------------------------------------------------------------------------

def test_step_zero_fixed_point():
    W, W_in = single_neuron()
    p = DynamicsParams(noise_sigma=0.0)
    s = dyn.step(NetworkState.zeros(1), W, W_in, [0.0], np.zeros(1), p)
    assert s.x[0] == 0.0
    assert s.step == 1


def test_step_tanh_bias_fixed_point():
    W, W_in = single_neuron()
    b = np.array([0.7])
    p = DynamicsParams(noise_sigma=0.0)
    s = NetworkState.zeros(1)
    s.x[:] = np.tanh(b)
    s2 = dyn.step(s, W, W_in, [0.0], b, p)
    assert s2.x[0] == pytest.approx(np.tanh(0.7), abs=1e-15)


def test_step_scalar_leak():
    W, W_in = single_neuron()
    p = DynamicsParams(tau_fast=-1.0 / math.log(0.9), noise_sigma=0.0)
    assert p.alpha_fast == pytest.approx(0.9)
    s = NetworkState.zeros(1)
    s.x[:] = 0.5
    assert dyn.step(s, W, W_in, [0.0], np.zeros(1), p).x[0] == pytest.approx(0.45, abs=1e-12)


def test_step_nonfinite_preactivation_reports_index():
    L = BlockLayout(1, 3, 1)
    W = BlockSparseMatrix(L)
    b = np.array([0.0, np.inf, 0.0])
    with pytest.raises(dyn.DynamicsError) as exc:
        dyn.step(NetworkState.zeros(3), W, np.zeros((3, 1)), [0.0], b, DynamicsParams())
    assert exc.value.index == 1


def test_clamp_keeps_state_inside_open_interval():
    W, W_in = single_neuron()
    p = DynamicsParams(tau_fast=1e-3, noise_sigma=0.0)
    s = dyn.step(NetworkState.zeros(1), W, W_in, [0.0], np.array([50.0]), p)
    assert abs(s.x[0]) < 1.0


# -- traces ---------------------------------------------------------------------------------

def test_traces_zero_and_fixture_values():
    p = DynamicsParams(tau_fast=20.0)      # tau_elig = 200
    assert p.alpha_elig == pytest.approx(0.99501, abs=1e-5)
    assert p.alpha_fast == pytest.approx(0.95123, abs=1e-5)
    s = NetworkState(np.zeros(1), np.zeros(1), np.zeros(1))
    assert dyn.update_traces(s, p).trc[0] == 0.0
    s = NetworkState(np.ones(1), np.ones(1), np.zeros(1))
    assert dyn.update_traces(s, p).trc[0] == pytest.approx(1.04378, abs=1e-5)


def test_activity_trace_fixed_point():
    s = NetworkState(np.array([-0.3]), np.zeros(1), np.array([0.3]))
    assert dyn.update_traces(s, DynamicsParams()).a[0] == pytest.approx(0.3, abs=1e-15)


def test_time_constant_ratios():
    p = DynamicsParams()
    assert p.tau_fast == 10.0
    assert p.tau_elig == 100.0
    assert p.tau_act == 500000.0
    for a in (p.alpha_fast, p.alpha_elig, p.alpha_act):
        assert 0.0 < a < 1.0


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=300), st.floats(0.5, 50))
def test_trace_bound_property(xs, tau):
    p = DynamicsParams(tau_fast=tau)
    s = NetworkState(np.zeros(1), np.zeros(1), np.zeros(1))
    for x in xs:
        s.x = np.array([x])
        dyn.update_traces(s, p)
        assert abs(s.trc[0]) <= p.trace_bound * (1 + 1e-12)


# -- noise -----------------------------------------------------------------------------------

def test_noise_zero_sigma():
    assert dyn.noise_sample(1, 2, 3, 0.0) == 0.0


@pytest.mark.parametrize("seed,step,index", [(0, 0, 0), (1, 2, 3), (2**63 + 5, 10**12, 4095), (7, 1, 0)])
def test_noise_matches_integer_oracle(seed, step, index):
    assert dyn.noise_sample(seed, step, index, 0.7) == noise_oracle(seed, step, index, 0.7)


@given(st.integers(0, M64), st.integers(0, 2**62), st.integers(0, 2**20))
def test_noise_is_pure(seed, step, index):
    a = dyn.noise_sample(seed, step, index, 1.0)
    b = dyn.noise_sample(seed, step, index, 1.0)
    assert a == b and math.isfinite(a)
    v = dyn.noise_vector(seed, step, np.array([index, index + 1]), 1.0)
    assert v[0] == a


def test_noise_moments():
    v = dyn.noise_vector(11, 5, np.arange(200_000), 1.0)
    assert abs(v.mean()) < 0.01
    assert abs(v.std() - 1.0) < 0.01


def test_chunking_invariance():
    rng = np.random.default_rng(0)
    L = BlockLayout(4, 4, 2)
    W = random_block_sparse(L, 2, 0.9, rng)
    W_in = rng.normal(size=(L.N, 1))
    b = rng.normal(0, 0.1, L.N)
    u = rng.normal(size=(100, 1))
    p = DynamicsParams(noise_sigma=0.05)
    s0 = NetworkState.zeros(L.N, noise_seed=9)
    s_full, xs_full = dyn.run(s0.copy(), W, W_in, u, b, p)
    s_half, xs1 = dyn.run(s0.copy(), W, W_in, u[:50], b, p)
    s_half, xs2 = dyn.run(s_half, W, W_in, u[50:], b, p)
    assert np.array_equal(xs_full, np.vstack([xs1, xs2]))
    assert np.array_equal(s_full.trc, s_half.trc)


def test_replicas_get_distinct_noise():
    L = BlockLayout(1, 2, 1)
    W = BlockSparseMatrix(L)
    s = dyn.step(NetworkState.zeros(2, replicas=2), W, np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2),
                 DynamicsParams(noise_sigma=0.1))
    assert not np.array_equal(s.x[0], s.x[1])


def test_contractive_without_weights():
    W, W_in = single_neuron()
    b = np.array([0.3])
    p = DynamicsParams(noise_sigma=0.0)
    s = NetworkState.zeros(1)
    s.x[:] = 0.99
    gaps = []
    for _ in range(50):
        s = dyn.step(s, W, W_in, [0.0], b, p)
        gaps.append(abs(s.x[0] - np.tanh(0.3)))
    assert all(g2 <= g1 for g1, g2 in zip(gaps, gaps[1:]))


# -- Jacobian ------------------------------------------------------------------------------------

def test_spectral_radius_zero_weights():
    L = BlockLayout(2, 3, 1)
    p = DynamicsParams()
    rho, ok = dyn.spectral_radius(BlockSparseMatrix(L), np.zeros(6), np.zeros(6), [0.0], p, iters=60)
    assert ok and rho == pytest.approx(p.alpha_fast, rel=1e-9)


def test_spectral_radius_scaled_identity():
    L = BlockLayout(2, 3, 1)
    g = 0.6
    W = BlockSparseMatrix.from_blocks(L, {(i, i): g * np.eye(3) for i in range(2)}, mask_self=False)
    p = DynamicsParams()
    J = dyn.one_step_jacobian(W, np.zeros(6), np.zeros(6), [0.0], p)
    np.testing.assert_allclose(J, (p.alpha_fast + (1 - p.alpha_fast) * g) * np.eye(6))
    rho, _ = dyn.spectral_radius(W, np.zeros(6), np.zeros(6), [0.0], p, iters=60)
    assert rho == pytest.approx(p.alpha_fast + (1 - p.alpha_fast) * g, rel=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_spectral_radius_matches_dense_eigensolver(seed):
    rng = np.random.default_rng(seed)
    L = BlockLayout(8, 8, 2)
    W = random_block_sparse(L, 2, 3.0, rng)
    x = np.tanh(rng.normal(size=L.N))
    b = rng.normal(0, 0.2, L.N)
    p = DynamicsParams()
    J = dyn.one_step_jacobian(W, x, b, [0.0], p)
    ref = np.max(np.abs(np.linalg.eigvals(J)))
    rho, _ = dyn.spectral_radius(W, x, b, [0.0], p, iters=200)
    assert rho == pytest.approx(ref, rel=1e-3)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(4)
    L = BlockLayout(3, 3, 2)
    W = random_block_sparse(L, 2, 1.0, rng)
    W_in = rng.normal(size=(L.N, 1))
    b = rng.normal(0, 0.3, L.N)
    x = np.tanh(rng.normal(size=L.N)) * 0.5
    p = DynamicsParams(noise_sigma=0.0)

    def f(v):
        return dyn.step(NetworkState(v, np.zeros(L.N), np.zeros(L.N)), W, W_in, [0.2], b, p).x

    h = 1e-6
    J_fd = np.column_stack([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(L.N)])
    J = dyn.one_step_jacobian(W, x, b, [0.2], p, W_in=W_in)
    np.testing.assert_allclose(J, J_fd, atol=1e-8)


def test_spectral_radius_iteration_floor():
    L = BlockLayout(1, 2, 1)
    with pytest.raises(ValueError):
        dyn.spectral_radius(BlockSparseMatrix(L), np.zeros(2), np.zeros(2), [0.0], DynamicsParams(), iters=10)
