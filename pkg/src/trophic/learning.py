"""Synaptic learning rules.

All rules are pure: they return increments and leave applying them to the
caller (:class:`trophic.network.Network`).  Vectors may carry a leading
replica axis; batch averages are taken over it in replica order.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .blocksparse import BlockSparseMatrix


class RateOrderingError(ValueError):
    pass


@dataclass(frozen=True)
class PlasticityRates:
    eta_h: float = 1.0
    eta_o: float = 0.5
    eta_d: float = 1e-4
    eta_b: float = 1e-3
    eta_out: float = 0.1
    eta_fb: float = 0.01
    p_star: float = 0.1
    eps_small: float = 1e-6
    norm_cap: float = 10.0
    block_cap: float = 10.0

    def validate(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise RateOrderingError(f"{f.name} must be >= 0")
        eta_w = max(self.eta_h, self.eta_o)
        # feedback slower than readout slower than recurrent plasticity
        if not (self.eta_fb <= self.eta_out / 10.0 + 1e-15 and self.eta_out / 10.0 <= eta_w / 100.0 + 1e-15):
            raise RateOrderingError(
                f"need eta_fb <= eta_out/10 <= max(eta_h, eta_o)/100; got eta_fb={self.eta_fb}, "
                f"eta_out={self.eta_out}, eta_w={eta_w}"
            )
        return self


@dataclass
class LearnableHeads:
    R: np.ndarray        # (d_out, N)
    W_fb: np.ndarray     # (N, d_out)
    b: np.ndarray        # (N,)
    R_V: np.ndarray | None = None   # (1, N)

    def copy(self) -> "LearnableHeads":
        return LearnableHeads(self.R.copy(), self.W_fb.copy(), self.b.copy(),
                              None if self.R_V is None else self.R_V.copy())


def _batch(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v[None] if v.ndim == 1 else v


def inverse_power(x, eps_small: float, enabled: bool = True) -> np.ndarray:
    """Per-replica NLMS factor ``1 / (||x||^2 + eps)`` (ones when disabled)."""
    X = _batch(x)
    if not enabled:
        return np.ones(X.shape[0])
    return 1.0 / (np.einsum("bi,bi->b", X, X) + eps_small)


def norm_project(M: np.ndarray, cap: float) -> np.ndarray:
    """Rescale ``M`` so that its Frobenius norm does not exceed ``cap``."""
    M = np.asarray(M, dtype=float)
    n = np.sqrt(np.sum(M * M))
    if n <= cap or n == 0.0:
        return M
    return M * (cap / n)


def project_rows(M: np.ndarray, cap: float) -> np.ndarray:
    n = np.linalg.norm(M, axis=1, keepdims=True)
    scale = np.where(n > cap, cap / np.maximum(n, 1e-300), 1.0)
    return M * scale


def project_blocks(data: np.ndarray, cap: float) -> np.ndarray:
    """Per-tile Frobenius projection of an ``(nnz, ell, ell)`` stack."""
    n = np.sqrt(np.einsum("nij,nij->n", data, data))
    scale = np.where(n > cap, cap / np.maximum(n, 1e-300), 1.0)
    return data * scale[:, None, None]


def readout_predict(R: np.ndarray, x) -> np.ndarray:
    return np.asarray(x, dtype=float) @ R.T


def nlms_readout_update(R, x, delta, eta_out: float, eps_small: float, cap: float | None = None,
                        normalize: bool = True) -> np.ndarray:
    """``-eta * <delta x^T / (||x||^2 + eps)>_batch``, optionally projected."""
    X, D = _batch(x), _batch(delta)
    g = inverse_power(X, eps_small, normalize)
    dR = -eta_out * np.einsum("b,bk,bj->kj", g, D, X) / X.shape[0]
    return dR if cap is None else norm_project(dR, cap)


def feedback_project(W_fb: np.ndarray, delta) -> np.ndarray:
    return np.asarray(delta, dtype=float) @ W_fb.T


def feedback_align_update(W_fb, R, delta, eta_fb: float, cap: float | None = None) -> np.ndarray:
    """Gradient step on ``||W_fb d - R^T d||^2 / 2`` (batch-averaged)."""
    D = _batch(delta)
    resid = D @ W_fb.T - D @ R          # (batch, N)
    dW = -eta_fb * resid.T @ D / D.shape[0]
    return dW if cap is None else norm_project(dW, cap)


def alignment_loss(W_fb, R, delta) -> float:
    D = _batch(delta)
    r = D @ W_fb.T - D @ R
    return 0.5 * float(np.sum(r * r)) / D.shape[0]


def gated_error(eps, x) -> np.ndarray:
    """Error gated by the local tanh derivative, ``eps * (1 - x^2)``."""
    x = np.asarray(x, dtype=float)
    return np.asarray(eps, dtype=float) * (1.0 - x * x)


def recurrent_plasticity(
    W: BlockSparseMatrix,
    x,
    trc,
    E,
    rates: PlasticityRates,
    normalize: bool = True,
    fan_in_scaling: bool = False,
) -> np.ndarray:
    """Error-gated Hebbian-Oja increment for every occupied tile.

    ``E`` is the Jacobian-gated error.  For the synapse pre ``k`` -> post ``l``
    (tile entry ``[l, k]``)::

        dW = tanh(E_l) * (eta_h trc_k trc_l + eta_o x_k (x_l - x_k W_lk)) * g - eta_d W_lk

    where ``g = 1/(||x||^2 + eps)`` when ``normalize`` (1 otherwise).  With
    ``fan_in_scaling`` the gated term is also divided by the postsynaptic
    fan-in.  Self-connections stay zero and each tile increment is projected
    to ``rates.block_cap``.  Returns an ``(nnz, ell, ell)`` stack aligned
    with ``W.data``.
    """
    L = W.layout
    if W.nnz_blocks == 0:
        return np.zeros_like(W.data)
    X, T, G = _batch(x), _batch(trc), _batch(E)
    nb = X.shape[0]
    g = inverse_power(X, rates.eps_small, normalize)
    Xb = X.reshape(nb, L.B, L.ell)
    Tb = T.reshape(nb, L.B, L.ell)
    gate = np.tanh(G).reshape(nb, L.B, L.ell) * g[:, None, None]
    rows, cols = W.rows, W.indices
    post_x, pre_x = Xb[:, rows], Xb[:, cols]          # (nb, nnz, ell)
    post_t, pre_t = Tb[:, rows], Tb[:, cols]
    gp = gate[:, rows]
    # Hebbian: gate_l trc_l trc_k
    hebb = np.einsum("bnl,bnk->nlk", gp * post_t, pre_t)
    # Oja: gate_l x_k x_l - gate_l x_k^2 W_lk
    oja = np.einsum("bnl,bnk->nlk", gp * post_x, pre_x)
    oja -= np.einsum("bnl,bnk->nlk", gp, pre_x * pre_x) * W.data
    gated = (rates.eta_h * hebb + rates.eta_o * oja) / nb
    if fan_in_scaling:
        fan_in = W.row_counts()[rows] * L.ell
        gated = gated / fan_in[:, None, None]
    dW = gated - rates.eta_d * W.data
    dW *= W.self_mask()
    return project_blocks(dW, rates.block_cap)


def homeostatic_bias_update(a, x, rates: PlasticityRates, normalize: bool = True) -> np.ndarray:
    A, X = _batch(a), _batch(x)
    g = inverse_power(X, rates.eps_small, normalize)
    return rates.eta_b * np.mean((rates.p_star - A) * g[:, None], axis=0)
