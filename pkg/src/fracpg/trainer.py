"""Fractional policy gradient training and the baseline learners.

A run is strictly sequential and owns its parameters; all randomness comes
from one :class:`numpy.random.SeedSequence` rooted at ``TrainConfig.seed``.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .envs import make_env
from .frac_math import KahanAccumulator
from .frac_td import (
    EtaVariant,
    FracTdConfig,
    FracTdState,
    MuVariant,
    recursive_step,
    td_error,
    theorem4_bound,
)
from .policy import (
    PolicyParams,
    ValueParams,
    batch_log_prob_and_score,
    batch_value_and_grad,
    grad_norm,
    init_policy,
    init_value,
    policy_for_env,
    sample_with_score,
    value,
    value_and_grad,
)

__all__ = [
    "Algo",
    "ValueSign",
    "TrainConfig",
    "default_config",
    "Transition",
    "AdaptiveLrState",
    "NumericalAbort",
    "OnlineStep",
    "online_update",
    "minibatch_update",
    "importance_weights",
    "EpisodeMetrics",
    "EpisodeResult",
    "run_episode",
    "reinforce_update",
    "discounted_returns",
    "surrogate_grads",
    "ppo_lite_update",
    "RunArtifact",
    "train",
]


class Algo(str, enum.Enum):
    FPG = "fpg"
    A2C = "a2c"
    REINFORCE = "reinforce"
    PPO_LITE = "ppo_lite"


class ValueSign(str, enum.Enum):
    """Direction of the critic step.

    DESCENT moves V(s) toward its TD target (``phi += lr * delta * grad V``).
    LITERAL applies the opposite sign, which pushes V away from the target.
    """

    DESCENT = "descent"
    LITERAL = "literal"


@dataclass(frozen=True)
class TrainConfig:
    env: str = "cartpole"
    algo: Algo = Algo.FPG
    alpha: float = 0.7
    gamma: float = 0.99
    beta_theta: float = 3e-3
    beta_v: float = 1e-2
    eps_tol: float = 1e-8
    eps_clip: float = 0.2
    max_episodes: int = 2000
    horizon: int | None = None  # None: the environment's step limit
    minibatch: int = 64
    mu_variant: MuVariant = MuVariant.THEOREM
    eta_variant: EtaVariant = EtaVariant.GAMMA_RECIPROCAL
    clipping_off: bool = False
    recursion_off: bool = False
    minibatch_off: bool = False
    value_sign: ValueSign = ValueSign.DESCENT
    ppo_epochs: int = 4
    hidden: int = 64
    seed: int = 0
    wall_clock: bool = False
    stop_at_threshold: bool = False

    def __post_init__(self):
        object.__setattr__(self, "algo", Algo(self.algo))
        object.__setattr__(self, "mu_variant", MuVariant(self.mu_variant))
        object.__setattr__(self, "eta_variant", EtaVariant(self.eta_variant))
        object.__setattr__(self, "value_sign", ValueSign(self.value_sign))
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not self.eps_clip > 0:
            raise ValueError("eps_clip must be positive")
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.max_episodes < 0:
            raise ValueError("max_episodes must be >= 0")
        if self.algo is Algo.FPG and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    def frac_config(self) -> FracTdConfig:
        return FracTdConfig(
            self.alpha,
            self.mu_variant,
            self.eta_variant,
            self.eps_tol,
            clipping_enabled=not self.clipping_off,
        )

    @property
    def uses_fractional(self) -> bool:
        return self.algo is Algo.FPG and not self.recursion_off

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, enum.Enum):
                d[k] = v.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


_ENV_DEFAULTS = {
    "cartpole": {"gamma": 0.99},
    "mountaincar": {"gamma": 0.99},
    "pendulum": {"gamma": 0.95},
}


def default_config(env: str = "cartpole", **overrides) -> TrainConfig:
    """Config with the per-environment discount filled in."""
    base = dict(_ENV_DEFAULTS.get(make_env(env).spec.name, {}))
    base.update(overrides)
    return TrainConfig(env=make_env(env).spec.name, **base)


@dataclass
class Transition:
    state: np.ndarray
    action: object  # int for discrete heads, raw (unclipped) ndarray for gaussian
    reward: float
    next_state: np.ndarray
    old_log_prob: float
    frac_delta: float
    done: bool


class AdaptiveLrState:
    """Running compensated sums of squared policy/value gradient norms."""

    __slots__ = ("_rho", "_nu")

    def __init__(self):
        self._rho = KahanAccumulator()
        self._nu = KahanAccumulator()

    @property
    def sum_sq_rho(self) -> float:
        return self._rho.value

    @property
    def sum_sq_nu(self) -> float:
        return self._nu.value

    def update(self, rho: float, nu: float) -> None:
        self._rho.add(rho * rho)
        self._nu.add(nu * nu)

    def rates(self, beta_theta: float, beta_v: float) -> tuple[float, float]:
        return (
            beta_theta / math.sqrt(1.0 + self.sum_sq_rho),
            beta_v / math.sqrt(1.0 + self.sum_sq_nu),
        )


class NumericalAbort(RuntimeError):
    """Raised when a parameter update produces non-finite values."""


def _check_finite(policy: PolicyParams, value_params: ValueParams, where: str) -> None:
    if not (np.isfinite(policy.theta).all() and np.isfinite(value_params.phi).all()):
        raise NumericalAbort(f"non-finite parameters after {where}")


class OnlineStep(NamedTuple):
    frac_state: FracTdState
    frac_delta: float
    lr_theta: float
    lr_v: float
    rho: float


def online_update(
    policy: PolicyParams,
    value_params: ValueParams,
    delta: float,
    score_vec: np.ndarray,
    vgrad: np.ndarray,
    frac_state: FracTdState,
    lr_state: AdaptiveLrState,
    config: TrainConfig,
    frac_config: FracTdConfig | None = None,
) -> OnlineStep:
    """One per-step actor-critic update driven by the fractional TD-error.

    Mutates ``policy.theta``, ``value_params.phi`` and ``lr_state`` in place.
    With ``recursion_off`` (or ``algo=A2C``) the plain TD-error is used and
    ``frac_state`` is returned unchanged.
    """
    if config.uses_fractional:
        frac_config = frac_config or config.frac_config()
        frac_state, frac = recursive_step(frac_state, delta, frac_config)
    else:
        frac = delta
    rho = grad_norm(score_vec)
    nu = grad_norm(vgrad)
    lr_state.update(rho, nu)
    lr_theta, lr_v = lr_state.rates(config.beta_theta, config.beta_v)
    if frac != 0.0:
        policy.theta += (lr_theta * frac) * score_vec
        sign = 1.0 if config.value_sign is ValueSign.DESCENT else -1.0
        value_params.phi += (sign * lr_v * frac) * vgrad
        policy.clamp_log_std()
        _check_finite(policy, value_params, "online update")
    return OnlineStep(frac_state, frac, lr_theta, lr_v, rho)


def importance_weights(new_log_probs: np.ndarray, old_log_probs: np.ndarray, eps_clip: float) -> np.ndarray:
    """``min(pi / pi_old, 1 + eps_clip)`` from log-probabilities."""
    ratio = np.exp(np.asarray(new_log_probs) - np.asarray(old_log_probs))
    return np.minimum(ratio, 1.0 + eps_clip)


def minibatch_update(
    policy: PolicyParams,
    value_params: ValueParams,
    buffer: list[Transition],
    config: TrainConfig,
    rng: np.random.Generator,
) -> PolicyParams:
    """Importance-weighted replay step; returns the new ``theta_old`` snapshot.

    Draws ``min(B, len(buffer))`` transitions without replacement.
    """
    if not buffer:
        raise ValueError("minibatch_update called with an empty buffer")
    B = min(config.minibatch, len(buffer))
    idx = np.sort(rng.choice(len(buffer), size=B, replace=False))
    batch = [buffer[i] for i in idx]
    states = np.array([tr.state for tr in batch])
    frac = np.array([tr.frac_delta for tr in batch])
    new_lp, scores = batch_log_prob_and_score(policy, states, [tr.action for tr in batch])
    w = importance_weights(new_lp, [tr.old_log_prob for tr in batch], config.eps_clip)
    coef = w * frac
    if not coef.any():
        return policy.copy()
    _, vgrads = batch_value_and_grad(value_params, states)
    sign = 1.0 if config.value_sign is ValueSign.DESCENT else -1.0
    policy.theta += config.beta_theta * (coef @ scores) / B
    value_params.phi += (sign * config.beta_v / B) * (coef @ vgrads)
    policy.clamp_log_std()
    _check_finite(policy, value_params, "minibatch update")
    return policy.copy()


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    out = np.empty(len(rewards))
    G = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        G = rewards[t] + gamma * G
        out[t] = G
    return out


def reinforce_update(policy: PolicyParams, states, actions, rewards, gamma: float, lr: float) -> np.ndarray:
    """Monte Carlo policy gradient at episode end.

    ``theta += lr * sum_t G_t * score_t``; returns the per-step gradient norms
    ``|G_t| * ||score_t||``.
    """
    returns = discounted_returns(rewards, gamma)
    _, scores = batch_log_prob_and_score(policy, np.array(states), actions)
    norms = np.abs(returns) * np.sqrt(np.einsum("ij,ij->i", scores, scores))
    if returns.any():
        policy.theta += lr * (returns @ scores)
        policy.clamp_log_std()
    return norms


def surrogate_grads(log_probs, old_log_probs, advantages, scores, eps_clip: float) -> np.ndarray:
    """Per-sample gradients of ``min(r A, clip(r, 1-eps, 1+eps) A)``, ``r = pi/pi_old``."""
    r = np.exp(np.asarray(log_probs) - np.asarray(old_log_probs))
    adv = np.asarray(advantages, dtype=np.float64)
    clipped = ((adv > 0) & (r > 1.0 + eps_clip)) | ((adv < 0) & (r < 1.0 - eps_clip))
    coef = np.where(clipped, 0.0, r * adv)
    return coef[:, None] * scores


def ppo_lite_update(
    policy: PolicyParams,
    value_params: ValueParams,
    states,
    actions,
    old_log_probs,
    returns,
    advantages,
    config: TrainConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Clipped-surrogate epochs over one episode's data.

    Returns the per-sample policy-gradient norms of the first epoch.
    """
    states = np.asarray(states)
    old_log_probs = np.asarray(old_log_probs)
    returns = np.asarray(returns)
    advantages = np.asarray(advantages)
    actions = list(actions)
    n = len(states)
    B = min(config.minibatch, n)
    norms = np.zeros(n)
    for epoch in range(config.ppo_epochs):
        order = rng.permutation(n)
        for start in range(0, n, B):
            idx = order[start : start + B]
            lp, scores = batch_log_prob_and_score(policy, states[idx], [actions[i] for i in idx])
            g = surrogate_grads(lp, old_log_probs[idx], advantages[idx], scores, config.eps_clip)
            if epoch == 0:
                norms[idx] = np.sqrt(np.einsum("ij,ij->i", g, g))
            v, vg = batch_value_and_grad(value_params, states[idx])
            policy.theta += config.beta_theta * g.sum(axis=0) / len(idx)
            value_params.phi += config.beta_v * ((returns[idx] - v) @ vg) / len(idx)
            policy.clamp_log_std()
            _check_finite(policy, value_params, "ppo update")
    return norms


@dataclass
class EpisodeMetrics:
    steps: int
    ret: float
    grad_norm_var: float  # variance of per-step policy-gradient norms in the episode
    max_abs_frac_delta: float
    clip_events: int
    bound_violations: int
    wall_ms: float


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    states: list
    actions: list
    rewards: list
    deltas: list
    frac_deltas: list
    grad_norms: list
    buffer: list[Transition]


def _collect(env, policy, episode_seed, horizon, rng):
    """Roll out one episode without learning (REINFORCE / PPO_LITE)."""
    obs = env.reset(episode_seed)
    states, actions, executed, rewards, logps, dones = [], [], [], [], [], []
    next_states = []
    for _ in range(horizon):
        a, lp, raw, _ = sample_with_score(policy, obs, rng)
        res = env.step(a)
        states.append(obs)
        actions.append(raw)
        executed.append(a)
        rewards.append(res.reward)
        logps.append(lp)
        next_states.append(res.observation)
        dones.append(res.done)
        obs = res.observation
        if res.done or res.truncated:
            break
    return states, actions, executed, rewards, logps, next_states, dones


def run_episode(
    env,
    policy: PolicyParams,
    value_params: ValueParams,
    config: TrainConfig,
    rng: np.random.Generator,
    episode_seed: int,
    lr_state: AdaptiveLrState | None = None,
    frac_config: FracTdConfig | None = None,
) -> EpisodeResult:
    """One episode of the chosen algorithm, updating parameters in place.

    For FPG and A2C the online update runs after every step and the episode's
    transitions are returned in ``buffer`` for the replay step. The
    fractional state starts from zero at every episode.
    """
    t0 = time.perf_counter()
    horizon = config.horizon or env.spec.max_steps
    if config.algo in (Algo.REINFORCE, Algo.PPO_LITE):
        return _run_episode_mc(env, policy, value_params, config, rng, episode_seed, horizon, t0)

    lr_state = lr_state if lr_state is not None else AdaptiveLrState()
    frac_config = frac_config or (config.frac_config() if config.uses_fractional else None)
    check_bound = config.uses_fractional and frac_config.clipping_enabled
    frac_state = FracTdState()
    obs = env.reset(episode_seed)
    states, actions, rewards, deltas, fracs, norms, buffer = [], [], [], [], [], [], []
    max_abs_delta = 0.0
    clip_events = violations = 0
    for _ in range(horizon):
        a, lp, raw, sc = sample_with_score(policy, obs, rng)
        res = env.step(a)
        v, vg = value_and_grad(value_params, obs)
        v_next = 0.0 if res.done else value(value_params, res.observation)
        delta = td_error(res.reward, v_next, v, config.gamma, res.done)
        if not math.isfinite(delta):
            raise NumericalAbort(f"non-finite TD-error at step {frac_state.t}")
        t = frac_state.t
        step = online_update(policy, value_params, delta, sc, vg, frac_state, lr_state, config, frac_config)
        frac_state = step.frac_state
        frac = step.frac_delta
        if check_bound:
            max_abs_delta = max(max_abs_delta, abs(delta))
            if abs(frac) > theorem4_bound(frac_config.constants, max_abs_delta, t):
                violations += 1
        states.append(obs)
        actions.append(raw)
        rewards.append(res.reward)
        deltas.append(delta)
        fracs.append(frac)
        norms.append(abs(frac) * step.rho)
        buffer.append(Transition(obs, raw, res.reward, res.observation, lp, frac, res.done))
        obs = res.observation
        if res.done or res.truncated:
            break
    if config.uses_fractional:
        clip_events = frac_state.clip_events
    metrics = EpisodeMetrics(
        steps=len(rewards),
        ret=float(sum(rewards)),
        grad_norm_var=float(np.var(norms)) if norms else 0.0,
        max_abs_frac_delta=float(max(map(abs, fracs))) if fracs else 0.0,
        clip_events=clip_events,
        bound_violations=violations,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
    return EpisodeResult(metrics, states, actions, rewards, deltas, fracs, norms, buffer)


def _run_episode_mc(env, policy, value_params, config, rng, episode_seed, horizon, t0):
    states, actions, _, rewards, logps, next_states, dones = _collect(env, policy, episode_seed, horizon, rng)
    if config.algo is Algo.REINFORCE:
        norms = reinforce_update(policy, states, actions, rewards, config.gamma, config.beta_theta)
        deltas = []
    else:
        bootstrap = 0.0 if dones[-1] else value(value_params, next_states[-1])
        returns = discounted_returns(rewards, config.gamma, bootstrap)
        adv = returns - value(value_params, np.array(states))
        deltas = adv.tolist()
        norms = ppo_lite_update(policy, value_params, states, actions, logps, returns, adv, config, rng)
    _check_finite(policy, value_params, f"{config.algo.value} update")
    metrics = EpisodeMetrics(
        steps=len(rewards),
        ret=float(sum(rewards)),
        grad_norm_var=float(np.var(norms)) if len(norms) else 0.0,
        max_abs_frac_delta=0.0,
        clip_events=0,
        bound_violations=0,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
    return EpisodeResult(metrics, states, actions, rewards, deltas, [], norms, [])


@dataclass
class RunArtifact:
    config: TrainConfig
    rows: list  # bench.MetricsRecord
    policy: PolicyParams
    value: ValueParams
    aborted: bool = False
    abort_reason: str = ""
    bound_violations: int = 0
    episodes: list[EpisodeResult] = field(default_factory=list, repr=False)

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.ret for r in self.rows])


GRAD_VAR_WINDOW = 20


def train(config: TrainConfig, *, keep_episodes: bool = False) -> RunArtifact:
    """Run ``config.max_episodes`` episodes and emit one metrics row per episode.

    On a non-finite update the run stops; the returned artifact carries the
    last finite parameters and ``aborted=True``.
    """
    from .bench import MetricsRecord, episodes_to_threshold

    env = make_env(config.env)
    init_ss, act_ss, env_ss, mb_ss = np.random.SeedSequence(config.seed).spawn(4)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    act_rng = np.random.Generator(np.random.PCG64(act_ss))
    env_rng = np.random.Generator(np.random.PCG64(env_ss))
    mb_rng = np.random.Generator(np.random.PCG64(mb_ss))

    policy = init_policy(policy_for_env(env.spec, config.hidden), init_rng)
    value_params = init_value(env.spec.obs_dim, init_rng, config.hidden)
    lr_state = AdaptiveLrState()
    frac_config = config.frac_config() if config.uses_fractional else None
    rows: list = []
    kept: list[EpisodeResult] = []
    recent_var: list[float] = []
    returns: list[float] = []
    good = (policy.copy(), value_params.copy())
    aborted, reason, violations = False, "", 0

    for ep in range(config.max_episodes):
        episode_seed = int(env_rng.integers(0, 2**63 - 1))
        try:
            result = run_episode(env, policy, value_params, config, act_rng, episode_seed, lr_state, frac_config)
            if config.algo in (Algo.FPG, Algo.A2C) and not config.minibatch_off and result.buffer:
                minibatch_update(policy, value_params, result.buffer, config, mb_rng)
        except NumericalAbort as exc:
            aborted, reason = True, f"episode {ep}: {exc}"
            policy, value_params = good
            break
        good = (policy.copy(), value_params.copy())
        m = result.metrics
        violations += m.bound_violations
        recent_var.append(m.grad_norm_var)
        if len(recent_var) > GRAD_VAR_WINDOW:
            recent_var.pop(0)
        rows.append(
            MetricsRecord(
                episode=ep + 1,
                steps=m.steps,
                ret=m.ret,
                grad_var_window=float(np.mean(recent_var)),
                max_abs_frac_delta=m.max_abs_frac_delta,
                clip_events=m.clip_events,
                wall_ms=m.wall_ms if config.wall_clock else 0.0,
            )
        )
        if keep_episodes:
            kept.append(result)
        returns.append(m.ret)
        if config.stop_at_threshold and episodes_to_threshold(returns, env.spec.solved_threshold) is not None:
            break
    return RunArtifact(config, rows, policy, value_params, aborted, reason, violations, kept)
