"""Deterministic signal generators for prediction experiments.

Every generator is a pure function of its parameters and seed and returns
values in [-1, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

KINDS = ("mackey_glass", "sine", "square", "random_walk", "delayed_recall", "schedule")


def mackey_glass_raw(tau_mg: float, length: int, beta: float = 0.2, gamma: float = 0.1, n: float = 10.0,
                     warmup: int = 500, dt: float = 0.1, sample_every: float = 1.0, z0: float = 1.2):
    """Unscaled Mackey-Glass series ``(warmup_part, kept_part)``.

    RK4 on ``dz/dt = beta z(t-tau) / (1 + z(t-tau)^n) - gamma z`` with a
    constant history of ``z0``; the delayed value at half steps is the mean
    of the two neighbouring grid points.
    """
    if tau_mg <= 0:
        raise ValueError("tau_mg must be positive")
    lag = int(round(tau_mg / dt))
    stride = int(round(sample_every / dt))
    total = (warmup + length) * stride
    z = np.empty(lag + total + 1)
    z[: lag + 1] = z0

    def f(zt, zd):
        return beta * zd / (1.0 + zd**n) - gamma * zt

    for k in range(lag, lag + total):
        zd0 = z[k - lag]
        zd1 = z[k - lag + 1]
        zdm = 0.5 * (zd0 + zd1)
        zk = z[k]
        k1 = f(zk, zd0)
        k2 = f(zk + 0.5 * dt * k1, zdm)
        k3 = f(zk + 0.5 * dt * k2, zdm)
        k4 = f(zk + dt * k3, zd1)
        z[k + 1] = zk + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    samples = z[lag::stride][: warmup + length]
    return samples[:warmup], samples[warmup:]


def mackey_glass(tau_mg: float = 17.0, beta: float = 0.2, gamma: float = 0.1, n: float = 10.0,
                 warmup: int = 500, length: int = 1000, seed: int = 0) -> np.ndarray:
    """Mackey-Glass stream rescaled to [-1, 1] with the warmup range.

    ``seed`` perturbs the constant initial history by a tiny amount so that
    distinct seeds give distinct (but equally chaotic) series; seed 0 uses
    the canonical history of 1.2.
    """
    z0 = 1.2 if seed == 0 else 1.2 + 1e-3 * np.random.default_rng(seed).uniform(-1, 1)
    head, body = mackey_glass_raw(tau_mg, length, beta, gamma, n, warmup, z0=z0)
    ref = head if head.size else body
    lo, hi = float(ref.min()), float(ref.max())
    if hi - lo <= 1e-12:
        return np.zeros_like(body)
    return np.clip(2.0 * (body - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def periodic(kind: str, period: float, length: int, phase: int = 0, amplitude: float = 1.0) -> np.ndarray:
    t = np.arange(phase, phase + length, dtype=float)
    if kind == "sine":
        return amplitude * np.sin(2.0 * np.pi * t / period)
    if kind == "square":
        return amplitude * np.where(np.mod(t, period) < period / 2.0, 1.0, -1.0)
    raise ValueError(f"unknown periodic kind {kind!r}")


def _reflect(v: float) -> float:
    # fold onto [-1, 1]
    v = (v + 1.0) % 4.0
    return (v if v <= 2.0 else 4.0 - v) - 1.0


def random_walk(sigma_step: float, length: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0, sigma_step, size=length)
    out = np.empty(length)
    z = 0.0
    for t in range(length):
        out[t] = z
        z = _reflect(z + steps[t])
    return out


def delayed_recall(u: np.ndarray, delay: int):
    """Pairs ``(u_t, u_{t-delay})``; targets before ``delay`` are zero."""
    u = np.asarray(u, dtype=float)
    if delay < 0:
        raise ValueError("delay must be >= 0")
    y = np.zeros_like(u)
    if delay == 0:
        y[:] = u
    elif delay < u.size:
        y[delay:] = u[:-delay]
    return u, y


@dataclass(frozen=True)
class TaskStream:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")

    def generate(self, length: int) -> np.ndarray:
        p = dict(self.params)
        if self.kind == "mackey_glass":
            return mackey_glass(length=length, seed=self.seed, **p)
        if self.kind in ("sine", "square"):
            return periodic(self.kind, p.pop("period", 50.0), length, **p)
        if self.kind == "random_walk":
            return random_walk(p.get("sigma_step", 0.1), length, self.seed)
        if self.kind == "delayed_recall":
            src = TaskStream(**p["source"]) if isinstance(p["source"], dict) else p["source"]
            return delayed_recall(src.generate(length), int(p["delay"]))[0]
        raise ValueError("schedule streams are built with schedule()")

    def pairs(self, length: int, horizon: int = 1):
        """Input/target arrays for one-step-ahead prediction (``y_t = u_{t+h}``)."""
        if self.kind == "delayed_recall":
            src = TaskStream(**self.params["source"]) if isinstance(self.params["source"], dict) \
                else self.params["source"]
            return delayed_recall(src.generate(length), int(self.params["delay"]))
        s = self.generate(length + horizon)
        return s[:length], s[horizon:length + horizon]


def schedule(segments):
    """Concatenate ``[(TaskStream, duration), ...]``; returns ``(u, y, markers)``.

    Each segment contributes ``duration`` one-step-ahead pairs; ``markers``
    holds the start index of every segment after the first.
    """
    us, ys, markers = [], [], []
    pos = 0
    for k, (stream, duration) in enumerate(segments):
        u, y = stream.pairs(int(duration))
        if k:
            markers.append(pos)
        us.append(u)
        ys.append(y)
        pos += int(duration)
    if not us:
        return np.zeros(0), np.zeros(0), []
    return np.concatenate(us), np.concatenate(ys), markers


def nrmse(pred, target) -> float:
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    sd = float(np.std(target))
    rmse = float(np.sqrt(np.mean((pred - target) ** 2)))
    return rmse / sd if sd > 0 else float("inf")


def export_stream(path, u, y):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "u", "y"])
        for t, (a, b) in enumerate(zip(u, y)):
            w.writerow([t, repr(float(a)), repr(float(b))])
