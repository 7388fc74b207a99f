"""Discrete-time network dynamics, traces and Jacobian diagnostics.

Time is counted in integer steps (one step is 2 ms nominal).  The state map
is the exponential-Euler discretization

    x' = a_fast * x + (1 - a_fast) * tanh(W x + W_in u + b) + noise

with ``a_k = exp(-dt / tau_k)``.  Noise is a pure function of
``(seed, step, index)`` so that trajectories do not depend on how the step
loop is chunked.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .blocksparse import BlockSparseMatrix

CLAMP = 1.0 - 1e-9
MS_PER_STEP = 2.0

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SALT_STEP = np.uint64(0xD1B54A32D192ED03)
_SALT_INDEX = np.uint64(0x8CB92BA72F3D8DD7)
_SALT_U1 = np.uint64(0x2545F4914F6CDD1D)
_SALT_U2 = np.uint64(0x61C8864680B583EB)


class DynamicsError(FloatingPointError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class DynamicsParams:
    """Time constants in steps.  ``tau_elig``/``tau_act`` follow fixed ratios."""

    tau_fast: float = 10.0
    elig_ratio: float = 10.0
    act_ratio: float = 5000.0
    noise_sigma: float = 0.01
    dt: float = 1.0

    def __post_init__(self):
        if self.tau_fast <= 0 or self.dt <= 0:
            raise ValueError("tau_fast and dt must be positive")
        if self.elig_ratio <= 0 or self.act_ratio <= 0:
            raise ValueError("time-constant ratios must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def tau_elig(self) -> float:
        return self.elig_ratio * self.tau_fast

    @property
    def tau_act(self) -> float:
        return self.act_ratio * self.tau_elig

    @property
    def alpha_fast(self) -> float:
        return math.exp(-self.dt / self.tau_fast)

    @property
    def alpha_elig(self) -> float:
        return math.exp(-self.dt / self.tau_elig)

    @property
    def alpha_act(self) -> float:
        return math.exp(-self.dt / self.tau_act)

    @property
    def trace_bound(self) -> float:
        """Supremum of |trc| when |x| <= 1."""
        return (1.0 - self.alpha_fast) / (1.0 - self.alpha_elig)


@dataclass
class NetworkState:
    """Activations and traces; arrays are ``(N,)`` or ``(replicas, N)``."""

    x: np.ndarray
    trc: np.ndarray
    a: np.ndarray
    step: int = 0
    noise_seed: int = 0
    pre: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zeros(cls, N: int, replicas: int | None = None, noise_seed: int = 0) -> "NetworkState":
        shape = (N,) if replicas is None else (replicas, N)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), 0, int(noise_seed))

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.x.copy(), self.trc.copy(), self.a.copy(), self.step, self.noise_seed,
            None if self.pre is None else self.pre.copy(),
        )

    @property
    def h(self) -> np.ndarray | None:
        """tanh output of the last step (``None`` before the first step)."""
        return None if self.pre is None else np.tanh(self.pre)


# -- noise --------------------------------------------------------------------

def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _rotl(z: np.ndarray, r: int) -> np.ndarray:
    return (z << np.uint64(r)) | (z >> np.uint64(64 - r))


def _to_unit(bits: np.ndarray) -> np.ndarray:
    # 53 high bits -> (0, 1), never exactly 0
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def noise_vector(seed: int, step: int, index, sigma: float) -> np.ndarray:
    """Vectorized :func:`noise_sample` over an integer index array."""
    index = np.asarray(index, dtype=np.uint64)
    if sigma == 0.0:
        return np.zeros(index.shape)
    with np.errstate(over="ignore"):
        s = np.asarray(int(seed) & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64)
        t = np.asarray(int(step) & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64)
        key = _splitmix(s ^ _rotl(_splitmix(t ^ _SALT_STEP), 17))
        h = _splitmix(key ^ _rotl(_splitmix(index ^ _SALT_INDEX), 31))
        u1 = _to_unit(_splitmix(h ^ _SALT_U1))
        u2 = _to_unit(_splitmix(h ^ _SALT_U2))
    return sigma * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def noise_sample(seed: int, step: int, index: int, sigma: float) -> float:
    """Gaussian(0, sigma^2) variate determined only by ``(seed, step, index)``."""
    return float(noise_vector(seed, step, np.array([index]), sigma)[0])


def step_noise(state: NetworkState, sigma: float, step: int | None = None) -> np.ndarray:
    """Noise added at ``step`` (default: the step about to be taken)."""
    t = state.step if step is None else step
    idx = np.arange(state.x.size, dtype=np.uint64).reshape(state.x.shape)
    return noise_vector(state.noise_seed, t, idx, sigma)


# -- state update -------------------------------------------------------------

def preactivation(W: BlockSparseMatrix, W_in: np.ndarray, x: np.ndarray, u, b: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return W.matvec(x) + u @ W_in.T + b


def update_traces(state: NetworkState, p: DynamicsParams) -> NetworkState:
    """Advance eligibility and activity traces with the current ``x``."""
    state.trc = p.alpha_elig * state.trc + (1.0 - p.alpha_fast) * state.x
    state.a = p.alpha_act * state.a + (1.0 - p.alpha_act) * np.abs(state.x)
    return state


def step(
    state: NetworkState,
    W: BlockSparseMatrix,
    W_in: np.ndarray,
    u,
    b: np.ndarray,
    p: DynamicsParams,
) -> NetworkState:
    """One exponential-Euler step; returns a new state."""
    if state.step >= 2**63 - 1:
        raise DynamicsError("step counter overflow")
    pre = preactivation(W, W_in, state.x, u, b)
    if not np.all(np.isfinite(pre)):
        bad = int(np.flatnonzero(~np.isfinite(pre.ravel()))[0])
        raise DynamicsError(f"non-finite pre-activation at neuron {bad % W.layout.N}", index=bad)
    af = p.alpha_fast
    x = af * state.x + (1.0 - af) * np.tanh(pre) + step_noise(state, p.noise_sigma)
    np.clip(x, -CLAMP, CLAMP, out=x)
    new = NetworkState(x, state.trc, state.a, state.step + 1, state.noise_seed, pre)
    return update_traces(new, p)


def run(state, W, W_in, inputs, b, p):
    """Step through ``inputs`` (one row per step); returns final state and xs."""
    xs = []
    for u in inputs:
        state = step(state, W, W_in, u, b, p)
        xs.append(state.x.copy())
    return state, np.asarray(xs)


# -- Jacobian diagnostics ---------------------------------------------------------

def one_step_jacobian(W, x, b, u, p: DynamicsParams, W_in=None) -> np.ndarray:
    """Dense Jacobian ``a_fast I + (1 - a_fast) diag(1 - h^2) W`` of the step map."""
    from .blocksparse import to_dense

    N = W.layout.N
    if W_in is None:
        W_in = np.zeros((N, np.size(u)))
    h = np.tanh(preactivation(W, W_in, np.asarray(x, float), u, b))
    af = p.alpha_fast
    return af * np.eye(N) + (1.0 - af) * (1.0 - h**2)[:, None] * to_dense(W)


def jacobian_operator(W, x, b, u, p: DynamicsParams, W_in=None):
    """Matrix-free ``v -> J v`` and its dimension."""
    N = W.layout.N
    if W_in is None:
        W_in = np.zeros((N, np.size(u)))
    gain = (1.0 - p.alpha_fast) * (1.0 - np.tanh(preactivation(W, W_in, np.asarray(x, float), u, b)) ** 2)
    af = p.alpha_fast

    def apply(v):
        return af * v + gain * W.matvec(v)

    return apply, N


def spectral_radius(
    W, x, b, u, p: DynamicsParams, iters: int = 200, W_in=None, tol: float = 1e-4, seed: int = 0,
) -> tuple[float, bool]:
    """Largest |eigenvalue| of the one-step Jacobian.

    Power iteration on the log-growth rate of ``J^k v``; when the estimate
    has not settled (clustered or complex dominant eigenvalues), it is
    refined with implicitly restarted Arnoldi seeded by the power iterate.
    Returns ``(rho, converged)``.
    """
    if iters < 50:
        raise ValueError("spectral_radius needs iters >= 50")
    apply, N = jacobian_operator(W, x, b, u, p, W_in)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=N)
    v /= np.linalg.norm(v)
    logs = np.empty(iters)
    for k in range(iters):
        w = apply(v)
        n = np.linalg.norm(w)
        if n == 0.0:
            return 0.0, True
        logs[k] = math.log(n)
        v = w / n
    half = iters // 2
    est_a = math.exp(logs[half:].mean())
    est_b = math.exp(logs[half + half // 2:].mean())
    if abs(est_a - est_b) <= tol * est_b:
        return est_b, True
    try:
        from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

        op = LinearOperator((N, N), matvec=apply, dtype=float)
        vals = eigs(op, k=1, which="LM", v0=v, tol=1e-10, maxiter=max(1000, 10 * iters),
                    return_eigenvectors=False)
        return float(np.abs(vals).max()), True
    except (ArpackNoConvergence, ValueError, RuntimeError):
        warnings.warn("spectral radius did not converge; returning power-iteration estimate")
        return est_b, False


def with_noise(p: DynamicsParams, sigma: float) -> DynamicsParams:
    return replace(p, noise_sigma=sigma)
