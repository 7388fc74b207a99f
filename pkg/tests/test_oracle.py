import numpy as np
import pytest
from hypothesis import given, strategies as st

from trophic import oracle
from trophic.blocksparse import BlockLayout, BlockSparseMatrix, to_dense
from trophic.dynamics import DynamicsParams
from trophic.harness.acceptance import finite_difference_gradient, oracle_fixture
from trophic.learning import PlasticityRates
from trophic.network import LearningSwitches, Network, NetworkConfig
from trophic.structure import StructuralPolicy, tfm_increment, tfm_update


def recorded(B=2, ell=4, steps=10, seed=3, tau=3.0, w_scale=0.5):
    cfg = NetworkConfig(B=B, ell=ell, d_in=1, d_out=1, c_max=min(B, 2), init_blocks_per_row=min(B, 2),
                        w_scale=w_scale, bias_scale=0.2, seed=seed, noise_seed=seed + 1)
    net = Network(cfg, DynamicsParams(tau_fast=tau), PlasticityRates(), StructuralPolicy(), LearningSwitches())
    net.heads.R = np.random.default_rng(seed).normal(0.0, 0.5, net.heads.R.shape)
    u = np.sin(2 * np.pi * np.arange(steps + 1) / 7.0)
    return oracle.record_trajectory(net, u[:-1, None], u[1:, None])


def pair_trajectory(w=0.4, x0=(0.3, -0.6), u=0.5, y=0.2, R=(1.5, -0.5), b=(0.1, 0.0), sigma=0.0):
    # neuron 1 -> neuron 0, one step, no noise
    W = BlockSparseMatrix.from_blocks(BlockLayout(2, 1, 1), {(0, 1): np.array([[w]])})
    p = DynamicsParams(tau_fast=2.0, noise_sigma=sigma)
    return oracle.Trajectory(x0=np.array(x0, float), xs=np.zeros((1, 2)), us=np.array([[u]]), ys=np.array([[y]]),
                             trc=np.zeros((1, 2)), eps=np.zeros((1, 2)), W_in=np.array([[1.0], [0.5]]),
                             b=np.array(b, float), params=p, noise_seed=0, step0=0,
                             R=np.array([R], float), W=W)


# -- recording ----------------------------------------------------------------------------

def test_replay_reproduces_recorded_states():
    tr = recorded()
    rp = oracle.replay(tr, to_dense(tr.W))
    np.testing.assert_allclose(rp.xs[1:], tr.xs, atol=1e-12)


def test_record_leaves_network_switches():
    cfg = NetworkConfig(B=2, ell=2, c_max=2)
    net = Network(cfg, DynamicsParams(), PlasticityRates(), StructuralPolicy(), LearningSwitches())
    W0 = net.W.copy()
    oracle.record_trajectory(net, np.zeros((5, 1)), np.ones((5, 1)))
    assert net.switches == LearningSwitches()
    assert net.W == W0


# -- BPTT -------------------------------------------------------------------------------------

def test_bptt_matches_finite_differences():
    tr = oracle_fixture()
    post, pre = oracle.synapse_index(tr.W)
    g = oracle.bptt_gradient(tr, tr.W)[post, pre]
    fd = finite_difference_gradient(tr)[post, pre]
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5


def test_single_synapse_hand_value():
    tr = pair_trajectory()
    af = tr.params.alpha_fast
    pre0 = 0.1 + 0.4 * -0.6 + 0.5
    h0 = np.tanh(pre0)
    x1 = np.array([af * 0.3 + (1 - af) * h0, af * -0.6 + (1 - af) * np.tanh(0.25)])
    delta = 1.5 * x1[0] - 0.5 * x1[1] - 0.2
    expect = delta * 1.5 * (1 - af) * (1 - h0**2) * -0.6
    assert oracle.bptt_gradient(tr, tr.W)[0, 1] == pytest.approx(expect, rel=1e-12)
    assert oracle.forward_eprop_exact(tr, tr.W).grad[0] == pytest.approx(expect, rel=1e-12)


def test_step_gradients_sum_to_total():
    tr = recorded(steps=8)
    total = sum(g for _, g in oracle.bptt_step_gradients(tr, tr.W))
    np.testing.assert_allclose(total, oracle.bptt_gradient(tr, tr.W), atol=1e-12)


def test_bptt_size_guard():
    tr = recorded(steps=3)
    tr.xs = np.zeros((oracle.BPTT_MAX_T + 1, tr.x0.size))
    with pytest.raises(oracle.OracleSizeError):
        oracle.bptt_gradient(tr, tr.W)


def test_block_sum_orientation():
    G = np.zeros((4, 4))
    G[0, 3] = 2.0    # post 0 (block 0), pre 3 (block 1)
    S = oracle.block_sum(G, 2)
    assert S[1, 0] == 2.0 and S.sum() == 2.0


# -- forward e-prop ---------------------------------------------------------------------------------

def test_eprop_matches_bptt_64_neurons():
    tr = recorded(B=8, ell=8, steps=24, seed=5, tau=5.0, w_scale=0.8)
    ep = oracle.forward_eprop_exact(tr, tr.W)
    g = oracle.bptt_gradient(tr, tr.W)[ep.post, ep.pre]
    assert np.linalg.norm(ep.grad - g) / np.linalg.norm(g) <= 1e-8


def test_eprop_block_map_matches_bptt_block_map():
    tr = recorded(steps=12)
    np.testing.assert_allclose(oracle.forward_eprop_exact(tr, tr.W).block_abs_mean,
                               oracle.bptt_block_gradients(tr, tr.W), rtol=1e-8, atol=1e-14)


def test_eprop_zero_error_gives_zero():
    tr = recorded(steps=6)
    tr.ys = tr.xs @ tr.R.T        # every step already on target
    np.testing.assert_allclose(oracle.forward_eprop_exact(tr, tr.W).grad, 0.0, atol=1e-15)


def test_synapse_index_skips_self_connections():
    W = BlockSparseMatrix.from_blocks(BlockLayout(2, 2, 2), {(0, 0): np.ones((2, 2)), (1, 0): np.ones((2, 2))})
    post, pre = oracle.synapse_index(W)
    assert len(post) == 2 + 4
    assert not np.any(post == pre)


# -- local heuristic -----------------------------------------------------------------------------------

def test_local_heuristic_zero_error_and_single_step():
    tr = recorded(steps=4)
    tr.eps = np.zeros_like(tr.eps)
    assert np.all(oracle.local_heuristic(tr, 4) == 0)
    tr = recorded(steps=1)
    from trophic.learning import gated_error
    ref = tfm_update(np.zeros((2, 2)), tr.trc[0], gated_error(tr.eps[0], tr.xs[0]), 4, 1.0)
    np.testing.assert_allclose(oracle.local_heuristic(tr, 4), ref)


def test_local_heuristic_is_mean_of_increments():
    from trophic.learning import gated_error
    tr = recorded(steps=15)
    incs = [tfm_increment(tr.trc[t], gated_error(tr.eps[t], tr.xs[t]), 4) for t in range(15)]
    np.testing.assert_allclose(oracle.local_heuristic(tr, 4), np.mean(incs, axis=0), atol=1e-15)


# -- diagonal approximation -------------------------------------------------------------------------------

def test_diagonal_equals_exact_for_one_step():
    tr = recorded(steps=1)
    tr.x0 = np.tanh(np.random.default_rng(0).normal(size=tr.x0.size))   # nonzero presynaptic state
    diag, _ = oracle.diagonal_approx(tr)
    post, pre = oracle.synapse_index(tr.W)
    g = oracle.bptt_gradient(tr, tr.W)[post, pre]
    np.testing.assert_allclose(diag[post, pre], g, rtol=1e-10, atol=1e-15)


def test_diagonal_saturated_and_ratio():
    tr = pair_trajectory(b=(50.0, 0.0))
    diag, ema = oracle.diagonal_approx(tr)
    assert np.all(diag[0] == 0.0) and np.any(ema[0] != 0.0)
    tr = pair_trajectory()
    diag, ema = oracle.diagonal_approx(tr)
    h = oracle.replay(tr, to_dense(tr.W)).hs[0]
    np.testing.assert_allclose(diag, ema * (1 - h**2)[:, None], rtol=1e-14)


# -- comparison ---------------------------------------------------------------------------------------

def test_compare_identical_and_negated():
    a = np.array([0.3, 1.2, -0.4, 2.0, 0.1, 0.7])
    c = oracle.compare(a, a, k_fraction=0.34)
    assert c.pearson == pytest.approx(1) and c.spearman == pytest.approx(1)
    assert c.cosine == pytest.approx(1) and c.auroc == 1.0 and c.precision_at_k == 1.0
    assert oracle.compare(-a, a).pearson == pytest.approx(-1)


def test_compare_spearman_hand_case():
    # sum d^2 = 4 over 5 items: 1 - 6*4/(5*24) = 0.8
    c = oracle.compare([1, 2, 3, 4, 5], [2, 1, 3, 5, 4])
    assert c.spearman == pytest.approx(0.8)


def test_compare_constant_map_is_undefined():
    c = oracle.compare(np.ones(4), np.arange(4.0))
    assert "pearson" in c.undefined and np.isnan(c.pearson)


def test_compare_size_guards():
    with pytest.raises(ValueError):
        oracle.compare([1.0], [1.0])
    with pytest.raises(ValueError):
        oracle.compare([1.0, 2.0], [1.0, 2.0, 3.0])


def test_auroc_hand_values():
    assert oracle.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert oracle.auroc([1, 1], [0, 1]) == pytest.approx(0.5)
    assert np.isnan(oracle.auroc([1, 2], [1, 1]))


@given(st.integers(0, 10_000))
def test_compare_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=20), rng.normal(size=20)
    perm = rng.permutation(20)
    c1, c2 = oracle.compare(a, b), oracle.compare(a[perm], b[perm])
    assert c1.pearson == pytest.approx(c2.pearson)
    assert c1.spearman == pytest.approx(c2.spearman)
    assert c1.auroc == pytest.approx(c2.auroc)


def test_shuffled_control_destroys_correlation():
    rng = np.random.default_rng(0)
    a = rng.normal(size=400)
    r = oracle.compare(a, rng.permutation(a)).pearson
    assert abs(r) < 0.3
