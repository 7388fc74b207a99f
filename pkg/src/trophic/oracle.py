"""Exact-gradient references and credit-map comparison metrics.

The loss is ``sum_t 0.5 * ||R x_t - y_t||^2``; ``dL_t/dx_t = R^T delta_t`` is
then exactly the analytic feedback target.  Gradients are taken with
respect to the dense recurrent matrix ``W[post, pre]`` through the same
discrete update, clamp and replayed noise that the network used.  Block
maps are returned in trophic orientation ``[pre_block, post_block]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .blocksparse import BlockSparseMatrix, to_dense
from .dynamics import CLAMP, DynamicsParams, noise_vector
from .learning import gated_error
from .structure import tfm_increment

BPTT_MAX_N = 4096
BPTT_MAX_T = 512
EPROP_MAX_N = 1024
EPROP_MAX_T = 64


class OracleSizeError(ValueError):
    pass


@dataclass
class Trajectory:
    """A frozen-plasticity run of one replica.

    ``xs[t]`` is the state after step ``t``; ``x0`` precedes the first
    step.  ``trc`` and ``eps`` are the eligibility trace and feedback error
    the network itself saw at each step.
    """

    x0: np.ndarray
    xs: np.ndarray
    us: np.ndarray
    ys: np.ndarray
    trc: np.ndarray
    eps: np.ndarray
    W_in: np.ndarray
    b: np.ndarray
    params: DynamicsParams
    noise_seed: int
    step0: int
    R: np.ndarray | None = None
    W: BlockSparseMatrix | None = None

    @property
    def length(self) -> int:
        return len(self.xs)

    def noise(self) -> np.ndarray:
        N = self.x0.size
        idx = np.arange(N, dtype=np.uint64)
        return np.array([noise_vector(self.noise_seed, self.step0 + t, idx, self.params.noise_sigma)
                         for t in range(self.length)]).reshape(self.length, N)


def record_trajectory(net, inputs, targets) -> Trajectory:
    """Run ``net`` with plasticity frozen, recording what the oracles need."""
    if net.cfg.replicas != 1:
        raise ValueError("trajectories are recorded from a single replica")
    saved = net.switches
    net.switches = saved.frozen()
    x0 = net.state.x[0].copy()
    step0 = net.state.step
    xs, trc, eps = [], [], []
    try:
        for u, y in zip(inputs, targets):
            net.advance(u)
            info = net.learn(y)
            xs.append(net.state.x[0].copy())
            trc.append(net.state.trc[0].copy())
            eps.append(info.eps[0].copy())
    finally:
        net.switches = saved
    us = np.asarray(inputs, dtype=float).reshape(len(xs), -1)
    ys = np.asarray(targets, dtype=float).reshape(len(xs), -1)
    return Trajectory(x0, np.asarray(xs), us, ys, np.asarray(trc), np.asarray(eps),
                      net.W_in.copy(), net.heads.b.copy(), net.dparams, net.state.noise_seed, step0,
                      net.heads.R.copy(), net.W.copy())


@dataclass
class Replay:
    xs: np.ndarray      # (T+1, N) including x0
    hs: np.ndarray      # (T, N) tanh outputs
    mask: np.ndarray    # (T, N) 1 where the clamp was inactive


def replay(traj: Trajectory, Wd: np.ndarray, noise: np.ndarray | None = None) -> Replay:
    """Re-simulate the trajectory with dense weights and replayed noise."""
    p = traj.params
    af = p.alpha_fast
    noise = traj.noise() if noise is None else noise
    T, N = traj.length, traj.x0.size
    xs = np.empty((T + 1, N))
    hs = np.empty((T, N))
    mask = np.empty((T, N))
    xs[0] = traj.x0
    for t in range(T):
        h = np.tanh(Wd @ xs[t] + traj.W_in @ traj.us[t] + traj.b)
        xt = af * xs[t] + (1.0 - af) * h + noise[t]
        mask[t] = (np.abs(xt) <= CLAMP).astype(float)
        xs[t + 1] = np.clip(xt, -CLAMP, CLAMP)
        hs[t] = h
    return Replay(xs, hs, mask)


def trajectory_loss(traj: Trajectory, Wd: np.ndarray, R: np.ndarray, noise=None, per_step=False):
    rp = replay(traj, Wd, noise)
    d = rp.xs[1:] @ R.T - traj.ys
    losses = 0.5 * np.sum(d * d, axis=1)
    return losses if per_step else float(losses.sum())


def _check_bptt(traj, N):
    if N > BPTT_MAX_N or traj.length > BPTT_MAX_T:
        raise OracleSizeError(f"BPTT oracle limited to N<={BPTT_MAX_N}, T<={BPTT_MAX_T}")


def _self_mask(N: int, ell: int) -> np.ndarray:
    # zero on self-connections (diagonal entries of diagonal tiles)
    return 1.0 - np.eye(N)


def block_sum(G: np.ndarray, ell: int) -> np.ndarray:
    """Sum a dense ``[post, pre]`` matrix over tiles; result is ``[pre, post]``."""
    N = G.shape[0]
    B = N // ell
    return G.reshape(B, ell, B, ell).sum(axis=(1, 3)).T


def bptt_gradient(traj: Trajectory, W, R: np.ndarray | None = None) -> np.ndarray:
    """Dense ``dL/dW`` of the summed loss (one reverse sweep)."""
    Wd = to_dense(W) if isinstance(W, BlockSparseMatrix) else np.asarray(W, float)
    R = traj.R if R is None else R
    N = Wd.shape[0]
    _check_bptt(traj, N)
    rp = replay(traj, Wd)
    af = traj.params.alpha_fast
    lam = np.zeros(N)
    grad = np.zeros((N, N))
    for s in range(traj.length - 1, -1, -1):
        d = R @ rp.xs[s + 1] - traj.ys[s]
        lam = (lam + R.T @ d) * rp.mask[s]
        ga = lam * (1.0 - af) * (1.0 - rp.hs[s] ** 2)
        grad += np.outer(ga, rp.xs[s])
        lam = af * lam + Wd.T @ ga
    return grad


def bptt_step_gradients(traj: Trajectory, W, R: np.ndarray | None = None):
    """Yield ``(t, dL_t/dW)`` for every step's own loss."""
    Wd = to_dense(W) if isinstance(W, BlockSparseMatrix) else np.asarray(W, float)
    R = traj.R if R is None else R
    N = Wd.shape[0]
    _check_bptt(traj, N)
    rp = replay(traj, Wd)
    af = traj.params.alpha_fast
    deriv = (1.0 - af) * (1.0 - rp.hs**2)
    for t in range(traj.length):
        d = R @ rp.xs[t + 1] - traj.ys[t]
        lam = (R.T @ d) * rp.mask[t]
        GA = np.empty((t + 1, N))
        for s in range(t, -1, -1):
            ga = lam * deriv[s]
            GA[s] = ga
            if s:
                lam = (af * lam + Wd.T @ ga) * rp.mask[s - 1]
        yield t, GA.T @ rp.xs[: t + 1]


def bptt_block_gradients(traj: Trajectory, W, R: np.ndarray | None = None) -> np.ndarray:
    """G_post: time average of ``|sum over tile of dL_t/dW|`` per block pair."""
    ell = (W.layout.ell if isinstance(W, BlockSparseMatrix) else traj.W.layout.ell)
    N = traj.x0.size
    mask = _self_mask(N, ell)
    acc = np.zeros((N // ell, N // ell))
    for _, g in bptt_step_gradients(traj, W, R):
        acc += np.abs(block_sum(g * mask, ell))
    return acc / traj.length


def local_heuristic(traj: Trajectory, ell: int, oracle_error: bool = False) -> np.ndarray:
    """H_post: time average of the per-step trophic increment.

    Uses the feedback error the network saw; with ``oracle_error`` the
    analytic ``R^T delta`` is used instead.
    """
    acc = np.zeros((traj.x0.size // ell,) * 2)
    for t in range(traj.length):
        if oracle_error:
            e = (traj.R @ traj.xs[t] - traj.ys[t]) @ traj.R
        else:
            e = traj.eps[t]
        acc += tfm_increment(traj.trc[t], gated_error(e, traj.xs[t]), ell)
    return acc / traj.length


# -- forward mode -------------------------------------------------------------------

def synapse_index(W: BlockSparseMatrix):
    """``(post, pre)`` index arrays of every existing non-self synapse."""
    ell = W.layout.ell
    posts, pres = [], []
    for n, (i, j) in enumerate(W.coords()):
        l, k = np.meshgrid(np.arange(ell), np.arange(ell), indexing="ij")
        keep = np.ones((ell, ell), bool) if i != j or not W.mask_self else (l != k)
        posts.append((i * ell + l)[keep])
        pres.append((j * ell + k)[keep])
    if not posts:
        return np.zeros(0, int), np.zeros(0, int)
    return np.concatenate(posts), np.concatenate(pres)


@dataclass
class EpropResult:
    post: np.ndarray
    pre: np.ndarray
    grad: np.ndarray            # total-loss gradient per synapse
    block_abs_mean: np.ndarray  # same aggregation as bptt_block_gradients

    def dense(self, N: int) -> np.ndarray:
        G = np.zeros((N, N))
        G[self.post, self.pre] = self.grad
        return G


def forward_eprop_exact(traj: Trajectory, W: BlockSparseMatrix, R: np.ndarray | None = None) -> EpropResult:
    """Forward-mode sensitivities of every existing synapse, full Jacobian."""
    R = traj.R if R is None else R
    N = W.layout.N
    ell = W.layout.ell
    if N > EPROP_MAX_N or traj.length > EPROP_MAX_T:
        raise OracleSizeError(f"forward e-prop limited to N<={EPROP_MAX_N}, T<={EPROP_MAX_T}")
    Wd = to_dense(W)
    rp = replay(traj, Wd)
    af = traj.params.alpha_fast
    post, pre = synapse_index(W)
    S = post.size
    P = np.zeros((N, S))
    grad = np.zeros(S)
    B = N // ell
    tile = (pre // ell) * B + (post // ell)       # trophic orientation [pre, post]
    acc = np.zeros(B * B)
    cols = np.arange(S)
    for t in range(traj.length):
        gain = (1.0 - af) * (1.0 - rp.hs[t] ** 2)
        P = af * P + gain[:, None] * (Wd @ P)
        P[post, cols] += gain[post] * rp.xs[t][pre]
        P *= rp.mask[t][:, None]
        d = R @ rp.xs[t + 1] - traj.ys[t]
        g_t = (R.T @ d) @ P
        grad += g_t
        acc += np.abs(np.bincount(tile, weights=g_t, minlength=B * B))
    return EpropResult(post, pre, grad, (acc / traj.length).reshape(B, B))


def diagonal_approx(traj: Trajectory, R: np.ndarray | None = None, W=None):
    """Factorized temporal credit: ``(dL/dx)_l * (1 - h_l^2) * z_k`` summed over time.

    ``z`` is an eligibility trace of presynaptic activity (rate
    ``alpha_elig``, gain ``1 - alpha_fast``) started at zero with the
    trajectory; ``h`` is the tanh output.  Returns dense ``(diagonal,
    ema_only)`` matrices in ``[post, pre]`` layout; the EMA-only variant
    drops the derivative factor.
    """
    R = traj.R if R is None else R
    W = traj.W if W is None else W
    Wd = to_dense(W) if isinstance(W, BlockSparseMatrix) else np.asarray(W, float)
    rp = replay(traj, Wd)
    p = traj.params
    N = traj.x0.size
    z = np.zeros(N)
    diag = np.zeros((N, N))
    ema = np.zeros((N, N))
    for t in range(traj.length):
        z = p.alpha_elig * z + (1.0 - p.alpha_fast) * rp.xs[t]
        dldx = R.T @ (R @ rp.xs[t + 1] - traj.ys[t])
        ema += np.outer(dldx, z)
        diag += np.outer(dldx * (1.0 - rp.hs[t] ** 2), z)
    return diag, ema


# -- comparison metrics -----------------------------------------------------------

@dataclass
class CreditComparison:
    pearson: float
    spearman: float
    cosine: float
    auroc: float
    precision_at_k: float
    undefined: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"pearson": self.pearson, "spearman": self.spearman, "cosine": self.cosine,
                "auroc": self.auroc, "precision_at_k": self.precision_at_k,
                "undefined": list(self.undefined)}


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else float("nan")


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with average ranks for ties."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    npos, nneg = int(labels.sum()), int((~labels).sum())
    if npos == 0 or nneg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - npos * (npos + 1) / 2.0) / (npos * nneg))


def compare(a, b, k_fraction: float = 0.1) -> CreditComparison:
    """Compare an estimate ``a`` against a reference ``b`` (both flattened).

    Positives for AUROC and precision@k are the top ``k_fraction`` of
    ``|b|``; ``|a|`` is the score.
    """
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError("compare needs two equal-length maps with >= 2 entries")
    undefined = []
    pearson = _pearson(a, b)
    spearman = _pearson(rankdata(a), rankdata(b))
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cosine = float(a @ b / (na * nb)) if na > 0 and nb > 0 else float("nan")
    k = max(1, int(round(k_fraction * a.size)))
    order_b = np.argsort(-np.abs(b), kind="stable")
    labels = np.zeros(a.size, bool)
    labels[order_b[:k]] = True
    auc = auroc(np.abs(a), labels)
    top_a = np.argsort(-np.abs(a), kind="stable")[:k]
    prec = float(labels[top_a].mean())
    for name, v in (("pearson", pearson), ("spearman", spearman), ("cosine", cosine), ("auroc", auc)):
        if math.isnan(v):
            undefined.append(name)
    return CreditComparison(pearson, spearman, cosine, auc, prec, tuple(undefined))
