"""Trophic Field Map and structural plasticity.

Orientation: the TFM is indexed ``T[pre_block, post_block]`` (outer product
of block-averaged eligibility with block-averaged gated error), while the
weight grid is ``W[post_block, pre_block]``.  :func:`grid` converts the map
to weight-grid coordinates; everything that pairs the TFM with tiles of W
goes through it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .blocksparse import BlockSparseMatrix, block_frobenius_norms


@dataclass
class TrophicFieldMap:
    T: np.ndarray
    alpha: float = 1e-6

    @classmethod
    def zeros(cls, B: int, alpha: float = 1e-6) -> "TrophicFieldMap":
        return cls(np.zeros((B, B)), alpha)

    def update(self, trc, eps_gated, ell: int) -> "TrophicFieldMap":
        self.T = tfm_update(self.T, trc, eps_gated, ell, self.alpha)
        return self


@dataclass(frozen=True)
class StructuralPolicy:
    p0: float = 20.0
    k_density: float = 20.0
    k_error: float = 10.0
    grow_count_max: int = 4
    init_scale: float = 0.1
    structural_period: int = 500
    q_admit: float = 0.5

    def percentile(self, density: float, ewma_error: float) -> float:
        p = self.p0 + self.k_density * density + self.k_error * ewma_error
        return float(min(99.0, max(1.0, p)))


@dataclass
class StructuralEvent:
    step: int
    p: float
    theta: float
    removed: list = field(default_factory=list)
    added: list = field(default_factory=list)
    density_before: float = 0.0
    density_after: float = 0.0
    order: tuple = ("prune", "grow")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["removed"] = [list(c) for c in self.removed]
        d["added"] = [list(c) for c in self.added]
        d["order"] = list(self.order)
        return d


def grid(T: np.ndarray) -> np.ndarray:
    """TFM in weight-grid coordinates ``[post, pre]``."""
    return np.asarray(T).T


def block_means(v, ell: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:     # replicas: average over them too
        v = v.mean(axis=0)
    return v.reshape(-1, ell).mean(axis=1)


def tfm_increment(trc, eps_gated, ell: int) -> np.ndarray:
    """``|trc_bar eps_bar^T|`` with block-averaged signals."""
    return np.abs(np.outer(block_means(trc, ell), block_means(eps_gated, ell)))


def tfm_update(T, trc, eps_gated, ell: int, alpha: float) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if alpha == 0.0:
        return T.copy()
    return (1.0 - alpha) * T + alpha * tfm_increment(trc, eps_gated, ell)


def viability(W: BlockSparseMatrix, T) -> np.ndarray:
    """``||W^(ij)||_F * (1 + T)`` on occupied tiles, zero elsewhere (grid coords)."""
    return block_frobenius_norms(W) * (1.0 + grid(T)) * W.occupancy()


def survival_threshold(viab_values, density: float, ewma_error: float, policy: StructuralPolicy):
    """Return ``(theta, p)``: the p-th percentile of occupied-block viabilities."""
    vals = np.asarray(viab_values, dtype=float).ravel()
    if vals.size == 0:
        raise ValueError("survival threshold needs at least one occupied block")
    p = policy.percentile(density, ewma_error)
    return float(np.percentile(vals, p)), p


def prune(W: BlockSparseMatrix, viab: np.ndarray, theta: float):
    """Remove occupied tiles with viability strictly below ``theta``."""
    out = W.copy()
    removed = [(i, j) for (i, j) in W.coords() if viab[i, j] < theta]
    for i, j in removed:
        out.remove_block(i, j)
    return out, removed


def growth_weights(W: BlockSparseMatrix, T):
    """Candidate tiles (grid coords) and their normalized trophic weights."""
    Tg = grid(T)
    tmax = float(np.max(Tg)) if Tg.size else 0.0
    if tmax <= 0.0:
        return [], np.zeros(0)
    occ = W.occupancy()
    counts = W.row_counts()
    cands, weights = [], []
    for i in range(W.layout.B):
        if counts[i] >= W.layout.c_max:
            continue
        for j in range(W.layout.B):
            if not occ[i, j] and Tg[i, j] > 0.0:
                cands.append((i, j))
                weights.append(Tg[i, j] / tmax)
    return cands, np.asarray(weights)


def select_growth_candidates(cands, weights, k: int, rng: np.random.Generator):
    """Weighted sampling without replacement (sequential draws)."""
    cands = list(cands)
    w = np.asarray(weights, dtype=float).copy()
    chosen = []
    while len(chosen) < k and w.sum() > 0.0:
        idx = int(rng.choice(len(cands), p=w / w.sum()))
        chosen.append((cands[idx], float(weights[idx])))
        w[idx] = 0.0
    return chosen


def grow(W: BlockSparseMatrix, T, theta: float, policy: StructuralPolicy, rng_seed):
    """Add tiles where trophic support is high; returns ``(W', added)``."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    out = W.copy()
    cands, weights = growth_weights(W, T)
    if not cands or policy.grow_count_max <= 0:
        return out, []
    ell = W.layout.ell
    added = []
    for (i, j), w in select_growth_candidates(cands, weights, policy.grow_count_max, rng):
        est = theta * w
        if est < theta * policy.q_admit:
            continue
        if out.row_counts()[i] >= out.layout.c_max:
            continue
        init = rng.normal(0.0, policy.init_scale / np.sqrt(ell), size=(ell, ell))
        out.insert_block(i, j, init)
        added.append((i, j))
    return out, added


def structural_step(W: BlockSparseMatrix, T, stats: dict, policy: StructuralPolicy, seed, step: int = 0):
    """Viability -> threshold -> prune -> grow, as one atomic edit.

    ``stats`` carries ``ewma_error`` (normalized); density is measured here.
    """
    density_before = W.density()
    if W.nnz_blocks == 0:
        theta, p = 0.0, policy.percentile(density_before, stats.get("ewma_error", 0.0))
        W1, removed = W.copy(), []
    else:
        viab = viability(W, T)
        occ_vals = viab[W.occupancy()]
        theta, p = survival_threshold(occ_vals, density_before, stats.get("ewma_error", 0.0), policy)
        W1, removed = prune(W, viab, theta)
    W2, added = grow(W1, T, theta, policy, seed)
    event = StructuralEvent(step, p, theta, removed, added, density_before, W2.density())
    return W2, event
