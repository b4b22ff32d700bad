"""Small classic-control environments with no external dependencies.

Dynamics follow the usual public benchmark definitions of CartPole-v1,
MountainCarContinuous-v0 and Pendulum-v1. Randomness comes only from the
seed passed to ``reset`` (numpy PCG64), so a seed plus an action sequence
fixes the trajectory bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Discrete",
    "Box",
    "EnvSpec",
    "StepResult",
    "CartPole",
    "MountainCarContinuous",
    "Pendulum",
    "make_env",
    "ENV_NAMES",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Box:
    low: float
    high: float
    dim: int


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_space: Discrete | Box
    max_steps: int
    solved_threshold: float


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool


def make_rng(seed: int) -> np.random.Generator:
    """The one PRNG used across the package: numpy's PCG64."""
    return np.random.Generator(np.random.PCG64(seed))


class _Env:
    spec: EnvSpec

    def __init__(self):
        self._steps = 0
        self._finished = True

    def _begin(self):
        self._steps = 0
        self._finished = False

    def _finish_step(self, obs, reward: float, done: bool) -> StepResult:
        self._steps += 1
        truncated = not done and self._steps >= self.spec.max_steps
        self._finished = done or truncated
        return StepResult(obs, float(reward), bool(done), bool(truncated))

    def _check_running(self):
        if self._finished:
            raise RuntimeError(f"{self.spec.name}: step() called before reset() or after episode end")

    def _continuous_action(self, action) -> float:
        a = np.asarray(action, dtype=np.float64)
        if a.size != self.spec.action_space.dim or a.ndim > 1:
            raise ValueError(
                f"{self.spec.name}: expected action of dimension {self.spec.action_space.dim}, got shape {a.shape}"
            )
        box = self.spec.action_space
        return min(max(float(a.reshape(-1)[0]), box.low), box.high)

    @property
    def elapsed_steps(self) -> int:
        return self._steps


class CartPole(_Env):
    spec = EnvSpec("cartpole", 4, Discrete(2), 500, 200.0)

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    total_mass = masspole + masscart
    length = 0.5  # half the pole length
    polemass_length = masspole * length
    force_mag = 10.0
    tau = 0.02
    theta_threshold = 12 * 2 * math.pi / 360
    x_threshold = 2.4

    def __init__(self):
        super().__init__()
        self.state = (0.0, 0.0, 0.0, 0.0)

    def reset(self, seed: int) -> np.ndarray:
        rng = make_rng(seed)
        self.state = tuple(float(v) for v in rng.uniform(-0.05, 0.05, size=4))
        self._begin()
        return np.array(self.state)

    def set_state(self, state: Sequence[float]) -> None:
        self.state = tuple(float(v) for v in state)
        self._begin()

    def step(self, action) -> StepResult:
        self._check_running()
        arr = np.asarray(action)
        if arr.size != 1 or arr.item() not in (0, 1):
            raise ValueError(f"cartpole: action must be 0 or 1, got {action!r}")
        a = int(arr.item())
        x, x_dot, theta, theta_dot = self.state
        force = self.force_mag if a == 1 else -self.force_mag
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + self.polemass_length * theta_dot**2 * sin_t) / self.total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos_t**2 / self.total_mass)
        )
        x_acc = temp - self.polemass_length * theta_acc * cos_t / self.total_mass
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * x_acc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * theta_acc
        self.state = (x, x_dot, theta, theta_dot)
        done = x < -self.x_threshold or x > self.x_threshold or theta < -self.theta_threshold or theta > self.theta_threshold
        return self._finish_step(np.array(self.state), 1.0, done)


class MountainCarContinuous(_Env):
    spec = EnvSpec("mountaincar", 2, Box(-1.0, 1.0, 1), 999, 90.0)

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.45
    power = 0.0015

    def __init__(self):
        super().__init__()
        self.state = (0.0, 0.0)

    def reset(self, seed: int) -> np.ndarray:
        rng = make_rng(seed)
        self.state = (float(rng.uniform(-0.6, -0.4)), 0.0)
        self._begin()
        return np.array(self.state)

    def set_state(self, state: Sequence[float]) -> None:
        self.state = (float(state[0]), float(state[1]))
        self._begin()

    def step(self, action) -> StepResult:
        self._check_running()
        force = self._continuous_action(action)
        position, velocity = self.state
        velocity += force * self.power - 0.0025 * math.cos(3 * position)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0:
            velocity = 0.0
        done = position >= self.goal_position and velocity >= 0.0
        reward = (100.0 if done else 0.0) - 0.1 * force**2
        self.state = (position, velocity)
        return self._finish_step(np.array(self.state), reward, done)


def _angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


class Pendulum(_Env):
    spec = EnvSpec("pendulum", 3, Box(-2.0, 2.0, 1), 200, -150.0)

    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.0
    l = 1.0

    def __init__(self):
        super().__init__()
        self.state = (0.0, 0.0)

    def reset(self, seed: int) -> np.ndarray:
        rng = make_rng(seed)
        self.state = (float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(-1.0, 1.0)))
        self._begin()
        return self._obs()

    def set_state(self, state: Sequence[float]) -> None:
        """Set (angle, angular velocity) directly."""
        self.state = (float(state[0]), float(state[1]))
        self._begin()

    def _obs(self) -> np.ndarray:
        th, thdot = self.state
        return np.array([math.cos(th), math.sin(th), thdot])

    def step(self, action) -> StepResult:
        self._check_running()
        u = self._continuous_action(action)
        th, thdot = self.state
        cost = _angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        newthdot = thdot + (3 * self.g / (2 * self.l) * math.sin(th) + 3.0 / (self.m * self.l**2) * u) * self.dt
        newthdot = min(max(newthdot, -self.max_speed), self.max_speed)
        newth = th + newthdot * self.dt
        self.state = (newth, newthdot)
        return self._finish_step(self._obs(), -cost, False)


_REGISTRY = {
    "cartpole": CartPole,
    "cartpole-v1": CartPole,
    "mountaincar": MountainCarContinuous,
    "mountaincarcontinuous": MountainCarContinuous,
    "mountaincarcontinuous-v0": MountainCarContinuous,
    "pendulum": Pendulum,
    "pendulum-v1": Pendulum,
}
ENV_NAMES = ("cartpole", "mountaincar", "pendulum")


def make_env(name: str):
    try:
        return _REGISTRY[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}") from None


def write_trajectory_csv(path, observations, actions, rewards, dones) -> None:
    """Dump one episode as rows ``t, obs..., action..., reward, done``."""
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    actions = np.asarray(actions, dtype=float).reshape(len(rewards), -1)
    obs_cols = [f"obs{i}" for i in range(observations.shape[1])]
    act_cols = [f"action{i}" for i in range(actions.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *obs_cols, *act_cols, "reward", "done"])
        for t, (o, a, r, d) in enumerate(zip(observations, actions, rewards, dones)):
            w.writerow([t, *(repr(float(v)) for v in o), *(repr(float(v)) for v in a), repr(float(r)), int(bool(d))])
