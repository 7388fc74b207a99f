"""A block-sparse recurrent network with its online learning loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .blocksparse import BlockLayout, BlockSparseMatrix, random_block_sparse
from .dynamics import DynamicsParams, NetworkState
from .learning import (
    LearnableHeads,
    PlasticityRates,
    feedback_align_update,
    feedback_project,
    gated_error,
    homeostatic_bias_update,
    nlms_readout_update,
    project_blocks,
    project_rows,
    readout_predict,
    recurrent_plasticity,
)
from .structure import StructuralEvent, StructuralPolicy, TrophicFieldMap, structural_step


@dataclass(frozen=True)
class NetworkConfig:
    B: int = 8
    ell: int = 16
    c_max: int = 0               # 0 -> B // 4
    d_in: int = 1
    d_out: int = 1
    init_blocks_per_row: int = 0  # 0 -> c_max
    w_scale: float = 0.9
    input_scale: float = 1.0
    bias_scale: float = 0.0
    readout_init: float = 0.0
    fb_init: str = "random"      # random | aligned | zero
    fb_scale: float = 1.0
    replicas: int = 1
    seed: int = 0
    noise_seed: int = 0

    @property
    def layout(self) -> BlockLayout:
        c = self.c_max or max(1, self.B // 4)
        return BlockLayout(self.B, self.ell, c)

    @property
    def N(self) -> int:
        return self.B * self.ell


@dataclass
class LearningSwitches:
    readout: bool = True
    feedback: bool = True
    recurrent: bool = True
    bias: bool = True
    trophic: bool = True
    structural: bool = False
    nlms: bool = True
    fan_in_scaling: bool = True

    def frozen(self) -> "LearningSwitches":
        return LearningSwitches(False, False, False, False, False, False, self.nlms, self.fan_in_scaling)


@dataclass
class StepInfo:
    y_hat: np.ndarray
    delta: np.ndarray | None = None
    eps: np.ndarray | None = None
    E: np.ndarray | None = None
    sq_error: float = float("nan")
    event: StructuralEvent | None = None


class Network:
    """Owns weights, heads, state and the trophic map; single writer."""

    def __init__(
        self,
        cfg: NetworkConfig = NetworkConfig(),
        dparams: DynamicsParams = DynamicsParams(),
        rates: PlasticityRates = PlasticityRates(),
        policy: StructuralPolicy = StructuralPolicy(),
        tfm_alpha: float = 1e-3,
        switches: LearningSwitches | None = None,
        error_ewma: float = 0.99,
    ):
        self.cfg = cfg
        self.dparams = dparams
        self.rates = rates.validate()
        self.policy = policy
        self.switches = switches or LearningSwitches()
        self.error_ewma = error_ewma
        rng = np.random.default_rng(cfg.seed)
        layout = cfg.layout
        N = cfg.N
        k = cfg.init_blocks_per_row or layout.c_max
        self.W: BlockSparseMatrix = random_block_sparse(layout, k, cfg.w_scale, rng)
        self.W_in = rng.uniform(-0.5, 0.5, size=(N, cfg.d_in)) * cfg.input_scale / np.sqrt(cfg.d_in)
        b = rng.normal(0.0, cfg.bias_scale, size=N) if cfg.bias_scale > 0 else np.zeros(N)
        R = rng.normal(0.0, cfg.readout_init / np.sqrt(N), size=(cfg.d_out, N)) if cfg.readout_init > 0 \
            else np.zeros((cfg.d_out, N))
        if cfg.fb_init == "aligned":
            W_fb = R.T.copy()
        elif cfg.fb_init == "zero":
            W_fb = np.zeros((N, cfg.d_out))
        else:
            W_fb = rng.normal(0.0, cfg.fb_scale / np.sqrt(N), size=(N, cfg.d_out))
        self.heads = LearnableHeads(R, W_fb, b)
        self.state = NetworkState.zeros(N, cfg.replicas, cfg.noise_seed)
        self.tfm = TrophicFieldMap.zeros(cfg.B, tfm_alpha)
        self.ewma_mse = 0.0
        self.ewma_power = 0.0
        self.events: list[StructuralEvent] = []

    # -- accessors ---------------------------------------------------------------

    @property
    def N(self) -> int:
        return self.cfg.N

    @property
    def x(self) -> np.ndarray:
        return self.state.x

    def normalized_error(self) -> float:
        return self.ewma_mse / self.ewma_power if self.ewma_power > 0 else 0.0

    def _inputs(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.ndim == 1:
            u = np.broadcast_to(u, (self.cfg.replicas, self.cfg.d_in))
        return u

    # -- dynamics ----------------------------------------------------------------

    def advance(self, u) -> np.ndarray:
        self.state = dyn.step(self.state, self.W, self.W_in, self._inputs(u), self.heads.b, self.dparams)
        return self.state.x

    def predict(self) -> np.ndarray:
        return readout_predict(self.heads.R, self.state.x)

    # -- learning ----------------------------------------------------------------

    def learn(self, y, delta=None, state: NetworkState | None = None) -> StepInfo:
        """Apply every enabled rule for the current state and target ``y``.

        ``delta`` overrides the readout error and ``state`` the state the
        rules see (both used by the TD loop, which learns about ``x_t``
        after stepping to ``x_{t+1}``).
        """
        sw, r, H = self.switches, self.rates, self.heads
        st = self.state if state is None else state
        x, trc = st.x, st.trc
        y_hat = readout_predict(H.R, x)
        if delta is None:
            y = np.broadcast_to(np.asarray(y, dtype=float).reshape(-1, self.cfg.d_out), y_hat.shape)
            delta = y_hat - y
        delta = np.asarray(delta, dtype=float).reshape(y_hat.shape[0], -1)
        eps = feedback_project(H.W_fb, delta)
        E = gated_error(eps, x)
        sq = float(np.mean(delta**2))
        if y is not None:
            self.ewma_mse = self.error_ewma * self.ewma_mse + (1 - self.error_ewma) * sq
            self.ewma_power = self.error_ewma * self.ewma_power + (1 - self.error_ewma) * float(np.mean(np.asarray(y) ** 2))
        if sw.readout:
            dR = nlms_readout_update(H.R, x, delta, r.eta_out, r.eps_small, r.norm_cap, sw.nlms)
            R_new = project_rows(H.R + dR, r.norm_cap)
        else:
            R_new = H.R
        if sw.feedback:
            dF = feedback_align_update(H.W_fb, H.R, delta, r.eta_fb, r.norm_cap)
            H.W_fb = project_rows((H.W_fb + dF).T, r.norm_cap).T
        H.R = R_new
        if sw.recurrent and self.W.nnz_blocks:
            dW = recurrent_plasticity(self.W, x, trc, E, r, sw.nlms, sw.fan_in_scaling)
            self.W.data = project_blocks(self.W.data + dW, r.block_cap)
            self.W.apply_self_mask()
        if sw.bias:
            H.b = H.b + homeostatic_bias_update(st.a, x, r, sw.nlms)
        if sw.trophic:
            self.tfm.update(trc, E, self.cfg.ell)
        info = StepInfo(y_hat, delta, eps, E, sq)
        if sw.structural and self.policy.structural_period > 0 and st.step % self.policy.structural_period == 0:
            info.event = self.structural_event()
        return info

    def structural_event(self) -> StructuralEvent:
        seed = np.random.default_rng([self.cfg.seed, self.state.step, 0x5EED])
        stats = {"ewma_error": self.normalized_error()}
        self.W, event = structural_step(self.W, self.tfm.T, stats, self.policy, seed, self.state.step)
        self.events.append(event)
        return event

    def train_step(self, u, y) -> StepInfo:
        self.advance(u)
        return self.learn(y)

    def eval_step(self, u, y=None) -> StepInfo:
        self.advance(u)
        y_hat = self.predict()
        if y is None:
            return StepInfo(y_hat)
        d = y_hat - np.asarray(y, dtype=float).reshape(-1, self.cfg.d_out)
        return StepInfo(y_hat, d, sq_error=float(np.mean(d**2)))

    # -- utilities ---------------------------------------------------------------

    def ablate(self, fraction: float, seed) -> list:
        """Remove ``round(fraction * nnz)`` random occupied tiles."""
        rng = np.random.default_rng(seed)
        coords = self.W.coords()
        k = int(round(fraction * len(coords)))
        pick = rng.choice(len(coords), size=k, replace=False) if k else []
        removed = [coords[i] for i in sorted(int(i) for i in pick)]
        for i, j in removed:
            self.W.remove_block(i, j)
        return removed

    def snapshot(self) -> dict:
        """Deep copy of all mutable learning state."""
        return {
            "W": self.W.copy(),
            "heads": self.heads.copy(),
            "state": self.state.copy(),
            "T": self.tfm.T.copy(),
            "ewma": (self.ewma_mse, self.ewma_power),
        }

    def restore(self, snap: dict):
        self.W = snap["W"].copy()
        self.heads = snap["heads"].copy()
        self.state = snap["state"].copy()
        self.tfm.T = snap["T"].copy()
        self.ewma_mse, self.ewma_power = snap["ewma"]
