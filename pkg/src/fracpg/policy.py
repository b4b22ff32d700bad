"""One-hidden-layer policy and value networks with hand-written gradients.

Parameters live in flat numpy vectors so that updates are plain vector
arithmetic; the layer matrices are reshaped views into them.

Layouts (H = hidden width, D = obs_dim, A = action count or action dim)::

    policy theta = [W1 (H*D), b1 (H), W2 (A*H), b2 (A), log_std (A, gaussian only)]
    value  phi   = [W1 (H*D), b1 (H), w2 (H), b2 (1)]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .frac_math import kahan_sum

__all__ = [
    "Architecture",
    "PolicyParams",
    "ValueParams",
    "init_policy",
    "init_value",
    "policy_for_env",
    "sample_action",
    "log_prob",
    "score",
    "log_prob_and_score",
    "sample_with_score",
    "batch_log_prob_and_score",
    "batch_value_and_grad",
    "action_probs",
    "value",
    "value_grad",
    "value_and_grad",
    "grad_norm",
    "central_difference",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
    "LOG_STD_MIN",
    "LOG_STD_MAX",
]

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Architecture:
    obs_dim: int
    hidden: int = 64
    head: str = "discrete"  # "discrete" or "gaussian"
    n_out: int = 2  # number of actions, or action dimension for gaussian
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.head not in ("discrete", "gaussian"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def size(self) -> int:
        H, D, A = self.hidden, self.obs_dim, self.n_out
        n = H * D + H + A * H + A
        return n + A if self.head == "gaussian" else n

    def header(self) -> str:
        return f"policy obs_dim={self.obs_dim} hidden={self.hidden} head={self.head} n_out={self.n_out} low={self.low!r} high={self.high!r}"


@dataclass
class PolicyParams:
    arch: Architecture
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.arch.size,):
            raise ValueError(f"theta has shape {self.theta.shape}, expected ({self.arch.size},)")

    def layers(self):
        """Views ``(W1, b1, W2, b2, log_std or None)`` into ``theta``."""
        H, D, A = self.arch.hidden, self.arch.obs_dim, self.arch.n_out
        th = self.theta
        i = 0
        W1 = th[i : i + H * D].reshape(H, D)
        i += H * D
        b1 = th[i : i + H]
        i += H
        W2 = th[i : i + A * H].reshape(A, H)
        i += A * H
        b2 = th[i : i + A]
        i += A
        log_std = th[i : i + A] if self.arch.head == "gaussian" else None
        return W1, b1, W2, b2, log_std

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.arch, self.theta.copy())

    def clamp_log_std(self) -> None:
        log_std = self.layers()[4]
        if log_std is not None:
            np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX, out=log_std)


@dataclass
class ValueParams:
    obs_dim: int
    hidden: int
    phi: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.shape != (self.size,):
            raise ValueError(f"phi has shape {self.phi.shape}, expected ({self.size},)")

    @property
    def size(self) -> int:
        return self.hidden * self.obs_dim + 2 * self.hidden + 1

    def layers(self):
        H, D = self.hidden, self.obs_dim
        p = self.phi
        return p[: H * D].reshape(H, D), p[H * D : H * D + H], p[H * D + H : H * D + 2 * H], p[-1:]

    def copy(self) -> "ValueParams":
        return ValueParams(self.obs_dim, self.hidden, self.phi.copy())

    def header(self) -> str:
        return f"value obs_dim={self.obs_dim} hidden={self.hidden}"


def _uniform_layer(rng, fan_out, fan_in, scale=1.0):
    bound = 1.0 / math.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_out, fan_in)) * scale
    b = rng.uniform(-bound, bound, size=fan_out) * scale
    return W, b


def init_policy(arch: Architecture, rng: np.random.Generator) -> PolicyParams:
    """Uniform(+-1/sqrt(fan_in)) init; the output layer is shrunk by 0.01."""
    W1, b1 = _uniform_layer(rng, arch.hidden, arch.obs_dim)
    W2, b2 = _uniform_layer(rng, arch.n_out, arch.hidden, scale=0.01)
    parts = [W1.ravel(), b1, W2.ravel(), b2]
    if arch.head == "gaussian":
        parts.append(np.zeros(arch.n_out))
    return PolicyParams(arch, np.concatenate(parts))


def init_value(obs_dim: int, rng: np.random.Generator, hidden: int = 64) -> ValueParams:
    W1, b1 = _uniform_layer(rng, hidden, obs_dim)
    W2, b2 = _uniform_layer(rng, 1, hidden)
    return ValueParams(obs_dim, hidden, np.concatenate([W1.ravel(), b1, W2.ravel(), b2]))


def policy_for_env(spec, hidden: int = 64) -> Architecture:
    """Architecture matching an :class:`~fracpg.envs.EnvSpec`."""
    space = spec.action_space
    if hasattr(space, "n"):
        return Architecture(spec.obs_dim, hidden, "discrete", space.n)
    return Architecture(spec.obs_dim, hidden, "gaussian", space.dim, space.low, space.high)


def _forward(params: PolicyParams, obs):
    """Hidden activations and head outputs; ``obs`` is (D,) or (N, D)."""
    W1, b1, W2, b2, log_std = params.layers()
    h = np.tanh(obs @ W1.T + b1)
    return h, h @ W2.T + b2, log_std


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def action_probs(params: PolicyParams, obs) -> np.ndarray:
    """Softmax probabilities of a discrete policy."""
    _, logits, _ = _forward(params, np.asarray(obs, dtype=np.float64))
    return np.exp(_log_softmax(logits))


def _gauss_logp(mean, log_std, action):
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    z = (action - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z + 2.0 * log_std + _LOG_2PI, axis=-1)


def _categorical(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from ``probs`` given a uniform ``u`` in [0, 1)."""
    a = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(a, len(probs) - 1)


def sample_action(params: PolicyParams, obs, rng: np.random.Generator, *, return_raw: bool = False):
    """Draw an action; returns ``(action, log_prob)``.

    Gaussian actions are clipped to the action bounds after sampling, but the
    log-probability is that of the unclipped draw. With ``return_raw=True`` a
    gaussian policy also returns the unclipped sample as a third element.
    """
    a, lp, raw, _ = _sample(params, np.asarray(obs, dtype=np.float64), rng, with_score=False)
    return (a, lp, raw) if return_raw else (a, lp)


def sample_with_score(params: PolicyParams, obs, rng: np.random.Generator):
    """Sample and differentiate in one forward pass.

    Returns ``(executed_action, log_prob, raw_action, score)`` where
    ``raw_action`` is what :func:`log_prob` expects (the unclipped draw for a
    gaussian head). Consumes the generator exactly like :func:`sample_action`.
    """
    return _sample(params, np.asarray(obs, dtype=np.float64), rng, with_score=True)


def _sample(params, obs, rng, with_score):
    h, out, log_std = _forward(params, obs)
    if params.arch.head == "discrete":
        logp = _log_softmax(out)
        a = _categorical(np.exp(logp), rng.random())
        raw = executed = a
    else:
        std = np.exp(np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))
        raw = out + std * rng.standard_normal(len(out))
        executed = np.clip(raw, params.arch.low, params.arch.high)
    if not with_score:
        lp = float(logp[a]) if params.arch.head == "discrete" else float(_gauss_logp(out, log_std, raw))
        return executed, lp, raw, None
    lp, g = _policy_backward(params, obs[None], h[None], out[None], [raw])
    return executed, float(lp[0]), raw, g[0]


def _policy_backward(params: PolicyParams, obs, h, out, actions):
    """Per-sample log-probabilities and score vectors for a batch.

    ``obs`` (N, D), ``h`` (N, H), ``out`` (N, A); returns ``(lp (N,), grads (N, P))``.
    """
    arch = params.arch
    _, _, W2, _, log_std = params.layers()
    N = obs.shape[0]
    H, D, A = arch.hidden, arch.obs_dim, arch.n_out
    grads = np.empty((N, arch.size))
    if arch.head == "discrete":
        logp = _log_softmax(out)
        idx = np.asarray(actions, dtype=np.intp).reshape(N)
        rows = np.arange(N)
        g_out = -np.exp(logp)
        g_out[rows, idx] += 1.0
        lp = logp[rows, idx]
    else:
        act = np.asarray(actions, dtype=np.float64).reshape(N, A)
        ls = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
        inv_var = np.exp(-2.0 * ls)
        diff = act - out
        g_out = diff * inv_var
        z2 = diff * diff * inv_var
        lp = -0.5 * np.sum(z2 + 2.0 * ls + _LOG_2PI, axis=1)
        g_ls = z2 - 1.0
        # no gradient through the clamp once log_std sits outside it
        g_ls[:, (log_std < LOG_STD_MIN) | (log_std > LOG_STD_MAX)] = 0.0
        grads[:, -A:] = g_ls
    g_pre = (g_out @ W2) * (1.0 - h * h)
    i = H * D
    grads[:, :i].reshape(N, H, D)[:] = g_pre[:, :, None] * obs[:, None, :]
    grads[:, i : i + H] = g_pre
    i += H
    grads[:, i : i + A * H].reshape(N, A, H)[:] = g_out[:, :, None] * h[:, None, :]
    i += A * H
    grads[:, i : i + A] = g_out
    return lp, grads


def log_prob(params: PolicyParams, obs, action) -> float:
    obs = np.asarray(obs, dtype=np.float64)
    _, out, log_std = _forward(params, obs)
    if params.arch.head == "discrete":
        return float(_log_softmax(out)[int(action)])
    return float(_gauss_logp(out, log_std, np.asarray(action, dtype=np.float64).reshape(-1)))


def batch_log_prob_and_score(params: PolicyParams, obs, actions):
    """Vectorised :func:`log_prob_and_score` over rows of ``obs``."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    h, out, _ = _forward(params, obs)
    return _policy_backward(params, obs, h, out, actions)


def log_prob_and_score(params: PolicyParams, obs, action):
    """``(log_prob, grad_theta log_prob)`` from a single forward pass."""
    lp, g = batch_log_prob_and_score(params, np.asarray(obs, dtype=np.float64)[None], [action])
    return float(lp[0]), g[0]


def score(params: PolicyParams, obs, action) -> np.ndarray:
    """Analytic gradient of ``log_prob`` with respect to ``theta``."""
    return log_prob_and_score(params, obs, action)[1]


def value(params: ValueParams, obs):
    """V(obs); a float for one observation, an array for a batch."""
    W1, b1, w2, b2 = params.layers()
    h = np.tanh(np.asarray(obs, dtype=np.float64) @ W1.T + b1)
    v = h @ w2 + b2[0]
    return float(v) if np.ndim(v) == 0 else v


def batch_value_and_grad(params: ValueParams, obs):
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    W1, b1, w2, b2 = params.layers()
    h = np.tanh(obs @ W1.T + b1)
    v = h @ w2 + b2[0]
    N = obs.shape[0]
    H, D = params.hidden, params.obs_dim
    g_pre = w2 * (1.0 - h * h)
    grads = np.empty((N, params.size))
    grads[:, : H * D].reshape(N, H, D)[:] = g_pre[:, :, None] * obs[:, None, :]
    grads[:, H * D : H * D + H] = g_pre
    grads[:, H * D + H : H * D + 2 * H] = h
    grads[:, -1] = 1.0
    return v, grads


def value_and_grad(params: ValueParams, obs):
    v, g = batch_value_and_grad(params, np.asarray(obs, dtype=np.float64)[None])
    return float(v[0]), g[0]


def value_grad(params: ValueParams, obs) -> np.ndarray:
    return value_and_grad(params, obs)[1]


def grad_norm(g) -> float:
    """Euclidean norm with a compensated sum of squares."""
    g = np.asarray(g, dtype=np.float64)
    return math.sqrt(kahan_sum(g * g))


def central_difference(f, x: np.ndarray, h: float = 1e-5, dtype=np.float64) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` by central differences.

    ``f`` is evaluated on a copy of ``x`` cast to ``dtype``. Passing
    ``np.longdouble`` (with an ``f`` that keeps that precision) shrinks the
    rounding error of the difference quotient, which otherwise dominates
    for gradient components below about 1e-6.
    """
    x = np.array(x, dtype=dtype)
    g = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g


def gradient_check(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest componentwise relative error, skipping components below ``floor``.

    A component counts when either estimate reaches ``floor`` in magnitude.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(a), np.abs(n))
    mask = scale >= floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a[mask] - n[mask]) / scale[mask]))


def save_checkpoint(path, policy: PolicyParams, value_params: ValueParams | None = None) -> None:
    """Write parameters as text: one header line per vector, then one value per line."""
    with open(path, "w") as fh:
        fh.write(policy.arch.header() + f" size={policy.theta.size}\n")
        fh.writelines(f"{v!r}\n" for v in policy.theta.tolist())
        if value_params is not None:
            fh.write(value_params.header() + f" size={value_params.phi.size}\n")
            fh.writelines(f"{v!r}\n" for v in value_params.phi.tolist())


def _parse_header(line: str) -> tuple[str, dict]:
    kind, *fields = line.split()
    return kind, dict(f.split("=", 1) for f in fields)


def load_checkpoint(path) -> tuple[PolicyParams, ValueParams | None]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    policy = value_params = None
    i = 0
    while i < len(lines):
        kind, meta = _parse_header(lines[i])
        n = int(meta["size"])
        vec = np.array([float(v) for v in lines[i + 1 : i + 1 + n]])
        if len(vec) != n:
            raise ValueError(f"{path}: truncated {kind} block")
        if kind == "policy":
            arch = Architecture(
                int(meta["obs_dim"]), int(meta["hidden"]), meta["head"], int(meta["n_out"]),
                float(meta["low"]), float(meta["high"]),
            )
            policy = PolicyParams(arch, vec)
        elif kind == "value":
            value_params = ValueParams(int(meta["obs_dim"]), int(meta["hidden"]), vec)
        else:
            raise ValueError(f"{path}: unknown block {kind!r}")
        i += 1 + n
    if policy is None:
        raise ValueError(f"{path}: no policy block")
    return policy, value_params
