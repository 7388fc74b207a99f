"""Actor-critic adaptation on a small built-in lander.

The value head is the network's ordinary readout trained by NLMS on the
TD(0) error; the feedback pathway learns to map the scalar RPE onto the
costate ``rpe * R_V^T``; a separate softmax policy readout is updated at
episode end with GAE advantages.  Nothing is stored beyond the current
episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .learning import inverse_power, norm_project

N_ACTIONS = 4
OBS_DIM = 8
NOOP, LEFT, MAIN, RIGHT = range(N_ACTIONS)


@dataclass(frozen=True)
class LanderParams:
    gravity: float = 1.0
    dt: float = 0.05
    main_impulse: float = 0.1       # velocity change per step along the body axis
    side_impulse: float = 0.02      # lateral velocity change per step
    torque_impulse: float = 0.1     # angular velocity change per step
    start_height: float = 1.0
    start_spread: float = 0.4
    pad_halfwidth: float = 0.2
    safe_vy: float = 0.5
    safe_vx: float = 0.3
    safe_angle: float = 0.3
    x_bound: float = 1.5
    y_bound: float = 2.0
    max_steps: int = 300
    main_fuel: float = 0.3
    side_fuel: float = 0.03
    step_reward_cap: float = 150.0


@dataclass
class LanderEnv:
    """Point-mass lander with attitude; legs are contact flags only.

    Observation: ``[x, y, vx, vy, angle, omega, leg_left, leg_right]``.
    Semi-implicit Euler: velocities are updated first, then positions.
    """

    params: LanderParams = field(default_factory=LanderParams)
    pos: np.ndarray = field(default_factory=lambda: np.zeros(2))
    vel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    angle: float = 0.0
    omega: float = 0.0
    legs: np.ndarray = field(default_factory=lambda: np.zeros(2))
    steps: int = 0
    done: bool = True
    landed: bool = False
    _potential: float = 0.0

    def observe(self) -> np.ndarray:
        return np.array([self.pos[0], self.pos[1], self.vel[0], self.vel[1],
                         self.angle, self.omega, self.legs[0], self.legs[1]])

    def potential(self) -> float:
        # shaping potential: closer, slower and more upright is better
        return float(-100.0 * np.hypot(*self.pos) - 100.0 * np.hypot(*self.vel) - 100.0 * abs(self.angle))

    def reset(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        p = self.params
        self.pos = np.array([rng.uniform(-p.start_spread, p.start_spread), p.start_height])
        self.vel = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.0)])
        self.angle = float(rng.uniform(-0.1, 0.1))
        self.omega = 0.0
        self.legs = np.zeros(2)
        self.steps = 0
        self.done = False
        self.landed = False
        self._potential = self.potential()
        return self.observe()

    def step(self, action: int):
        """Advance one step; returns ``(obs, reward, done)``."""
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        if action not in range(N_ACTIONS):
            raise ValueError(f"action must be in 0..{N_ACTIONS - 1}, got {action}")
        p = self.params
        fuel = 0.0
        vx, vy = self.vel
        if action == MAIN:
            vx -= np.sin(self.angle) * p.main_impulse
            vy += np.cos(self.angle) * p.main_impulse
            fuel = p.main_fuel
        elif action == LEFT:    # left engine pushes right, rotates clockwise
            vx += np.cos(self.angle) * p.side_impulse
            self.omega -= p.torque_impulse
            fuel = p.side_fuel
        elif action == RIGHT:
            vx -= np.cos(self.angle) * p.side_impulse
            self.omega += p.torque_impulse
            fuel = p.side_fuel
        vy -= p.gravity * p.dt
        self.vel = np.array([vx, vy])
        self.pos = self.pos + self.vel * p.dt
        self.angle += self.omega * p.dt
        self.steps += 1

        bonus = 0.0
        if self.pos[1] <= 0.0:
            self.pos[1] = 0.0
            soft = abs(self.vel[1]) <= p.safe_vy and abs(self.vel[0]) <= p.safe_vx and abs(self.angle) <= p.safe_angle
            self.done = True
            if soft:
                self.landed = True
                self.legs = np.ones(2)
                bonus = 100.0 * self.landing_quality() + 10.0 * self.legs.sum()
                # the legs absorb the impact; the lander comes to rest
                self.vel = np.zeros(2)
                self.omega = 0.0
            else:
                bonus = -100.0
        elif abs(self.pos[0]) > p.x_bound or self.pos[1] > p.y_bound:
            self.done = True
            bonus = -100.0
        elif self.steps >= p.max_steps:
            self.done = True
        phi = self.potential()
        reward = phi - self._potential - fuel + bonus
        self._potential = phi
        reward = float(np.clip(reward, -p.step_reward_cap, p.step_reward_cap))
        return self.observe(), reward, self.done

    def landing_quality(self) -> float:
        """1 on the pad at zero sink rate, decreasing with offset and speed."""
        p = self.params
        off = max(0.0, abs(self.pos[0]) - p.pad_halfwidth) / (p.x_bound - p.pad_halfwidth)
        speed = abs(self.vel[1]) / p.safe_vy
        return float(np.clip(1.0 - off - 0.2 * speed, 0.0, 1.0))


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    v: float
    v_next: float

    def __post_init__(self):
        vals = [self.reward, self.v, self.v_next]
        if not all(np.isfinite(vals)) or not np.all(np.isfinite(self.obs)) or not np.all(np.isfinite(self.next_obs)):
            raise ValueError("non-finite transition")


def td_error(r: float, gamma: float, v: float, v_next: float, done: bool) -> float:
    """``r + gamma V(x') - V(x)``; ``V(x')`` counts as 0 on terminal steps."""
    return float(r + (0.0 if done else gamma * v_next) - v)


def costate_target(rpe: float, R_V: np.ndarray) -> np.ndarray:
    return rpe * np.asarray(R_V, dtype=float).reshape(-1)


def gae_advantages(transitions, gamma: float, lam: float) -> np.ndarray:
    """Backward accumulation of ``(gamma lam)^k delta_{t+k}``, cut at terminals."""
    adv = np.zeros(len(transitions))
    acc = 0.0
    for t in range(len(transitions) - 1, -1, -1):
        tr = transitions[t]
        delta = td_error(tr.reward, gamma, tr.v, tr.v_next, tr.done)
        acc = delta + (0.0 if tr.done else gamma * lam * acc)
        adv[t] = acc
    return adv


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def policy_probs(R_pi: np.ndarray, x) -> np.ndarray:
    return softmax(R_pi @ np.asarray(x, dtype=float))


def policy_update(R_pi, x, action: int, advantage: float, eta: float, eps_small: float = 1e-6,
                  cap: float | None = None) -> np.ndarray:
    """NLMS-scaled policy-gradient step ``eta A (onehot - pi) x^T / (||x||^2 + eps)``."""
    x = np.asarray(x, dtype=float)
    pi = policy_probs(R_pi, x)
    onehot = np.zeros_like(pi)
    onehot[action] = 1.0
    g = inverse_power(x, eps_small)[0]
    dR = eta * advantage * g * np.outer(onehot - pi, x)
    return dR if cap is None else norm_project(dR, cap)


def log_prob(R_pi, x, action: int) -> float:
    return float(np.log(policy_probs(R_pi, x)[action]))


def random_policy_baseline(env: LanderEnv, episodes: int, seed: int) -> np.ndarray:
    """Episode returns of a uniform random policy."""
    rng = np.random.default_rng(seed)
    out = np.empty(episodes)
    for ep in range(episodes):
        env.reset([seed, ep])
        total, done = 0.0, False
        while not done:
            _, r, done = env.step(int(rng.integers(N_ACTIONS)))
            total += r
        out[ep] = total
    return out


@dataclass
class EpisodeResult:
    episode: int
    total_reward: float
    steps: int
    landed: bool


class LanderAgent:
    """Single shared network: value readout ``R`` plus policy readout ``R_pi``."""

    def __init__(self, net, gamma: float = 0.99, lam: float = 0.95, eta_pi: float = 0.05,
                 reward_scale: float = 0.01, pi_cap: float = 10.0, seed: int = 0):
        from .dynamics import NetworkState
        if net.cfg.d_in != OBS_DIM or net.cfg.d_out != 1:
            raise ValueError("lander agent needs d_in=8 and a scalar value readout")
        self._zeros = NetworkState.zeros
        self.net = net
        self.gamma, self.lam = gamma, lam
        self.eta_pi = eta_pi
        self.reward_scale = reward_scale
        self.pi_cap = pi_cap
        self.R_pi = np.zeros((N_ACTIONS, net.N))
        self.rng = np.random.default_rng([seed, 0xAC7])

    def value(self, x) -> float:
        return float(self.net.heads.R[0] @ x)

    def act(self, x) -> int:
        return int(self.rng.choice(N_ACTIONS, p=policy_probs(self.R_pi, x)))

    def run_episode(self, env: LanderEnv, episode: int, env_seed, learn: bool = True) -> EpisodeResult:
        net = self.net
        # fresh activity each episode; the step counter keeps running so noise never repeats
        fresh = self._zeros(net.N, net.cfg.replicas, net.cfg.noise_seed)
        fresh.step = net.state.step
        net.state = fresh
        obs = env.reset(env_seed)
        net.advance(obs)
        xs, acts, trans = [], [], []
        total, done = 0.0, False
        while not done:
            x = net.x[0].copy()
            a = self.act(x)
            obs, r, done = env.step(a)
            total += r
            prev = net.state
            v = self.value(x)
            net.advance(obs)
            v_next = 0.0 if done else self.value(net.x[0])
            rs = r * self.reward_scale
            rpe = td_error(rs, self.gamma, v, v_next, done)
            if learn:
                # value head follows the rpe; feedback learns the costate rpe * R_V^T
                net.learn(None, delta=np.array([-rpe]), state=prev)
            xs.append(x)
            acts.append(a)
            trans.append(Transition(obs, a, rs, obs, done, v, v_next))
        if learn:
            adv = gae_advantages(trans, self.gamma, self.lam)
            for x, a, A in zip(xs, acts, adv):
                self.R_pi = self.R_pi + policy_update(self.R_pi, x, a, A, self.eta_pi,
                                                      net.rates.eps_small, self.pi_cap)
            self.R_pi = norm_project(self.R_pi, self.pi_cap * N_ACTIONS)
        return EpisodeResult(episode, float(total), len(trans), bool(env.landed))
