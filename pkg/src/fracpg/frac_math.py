"""Special functions and fractional weight sequences.

Everything here is a pure function of its arguments. The weight containers
(:class:`FracWeights`, :class:`RlKernels`) grow on demand; a shared instance
must not be extended concurrently without external locking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numba
import numpy as np

__all__ = [
    "LANCZOS_G",
    "LANCZOS_COEFFS",
    "PoleError",
    "gamma",
    "lgamma_lanczos",
    "zeta",
    "FracWeights",
    "gl_weights",
    "gl_weights_direct",
    "gl_weight_asymptotic",
    "RlKernels",
    "rl_kernels",
    "StabilizationConstants",
    "stabilization_constants",
    "kahan_sum",
    "KahanAccumulator",
]

LANCZOS_G = 5.0
LANCZOS_COEFFS = (
    1.000000000190015,
    76.18009172947146,
    -86.50532032941677,
    24.01409824083091,
    -1.231739572450155,
    0.001208650973866179,
    -5.395239384953e-6,
)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_POLE_TOL = 1e-12


class PoleError(ValueError):
    """Raised when gamma is evaluated at (or numerically on) a pole."""


def _lanczos_series(z: float) -> float:
    s = LANCZOS_COEFFS[0]
    for k in range(1, 7):
        s += LANCZOS_COEFFS[k] / (z + k)
    return s


def _gamma_positive(z: float) -> float:
    t = z + LANCZOS_G + 0.5
    # split the power so t**(z+0.5) does not overflow before exp(-t) pulls it back
    half = 0.5 * (z + 0.5)
    p = t**half
    return _SQRT_2PI * p * math.exp(-t) * p * _lanczos_series(z) / z


def gamma(z: float) -> float:
    """Gamma function via the g=5 Lanczos series.

    Negative non-integer arguments go through the reflection formula
    ``Gamma(z) = pi / (Gamma(1 - z) sin(pi z))``.

    Raises
    ------
    PoleError
        If ``z`` is zero or a negative integer (within 1e-12).
    """
    z = float(z)
    if not math.isfinite(z):
        raise ValueError(f"gamma argument must be finite, got {z}")
    if z <= 0.0:
        n = round(z)
        frac = z - n
        if abs(frac) < _POLE_TOL:
            raise PoleError(f"gamma has a pole at z={z}")
        # sin(pi z) = (-1)^n sin(pi (z - n)); avoids loss of accuracy for large |z|
        s = math.sin(math.pi * frac)
        if n % 2:
            s = -s
        return math.pi / (_gamma_positive(1.0 - z) * s)
    return _gamma_positive(z)


def lgamma_lanczos(z: float) -> float:
    """log|Gamma(z)| for z > 0 using the same Lanczos series."""
    if z <= 0.0:
        raise ValueError("lgamma_lanczos requires z > 0")
    t = z + LANCZOS_G + 0.5
    return math.log(_SQRT_2PI) + (z + 0.5) * math.log(t) - t + math.log(_lanczos_series(z) / z)


_ZETA_TERMS = 1_000_000


@lru_cache(maxsize=256)
def zeta(s: float) -> float:
    """Riemann zeta for real ``s > 1``.

    Direct sum of the first 10**6 - 1 terms, then an Euler-Maclaurin tail
    starting at N = 10**6 with two Bernoulli corrections.
    """
    s = float(s)
    if not s > 1.0:
        raise ValueError(f"zeta requires s > 1, got {s}")
    n = np.arange(_ZETA_TERMS - 1, 0, -1, dtype=np.float64)  # small terms first
    head = float(np.sum(n**-s))
    N = float(_ZETA_TERMS)
    tail = (
        N ** (1.0 - s) / (s - 1.0)
        + 0.5 * N**-s
        + s * N ** (-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * N ** (-s - 3.0) / 720.0
    )
    return head + tail


def _check_alpha(alpha: float, *, allow_one: bool = False) -> float:
    alpha = float(alpha)
    ok = 0.0 < alpha <= 1.0 if allow_one else 0.0 < alpha < 1.0
    if not ok:
        bound = "(0, 1]" if allow_one else "(0, 1)"
        raise ValueError(f"alpha must lie in {bound}, got {alpha}")
    return alpha


@dataclass
class FracWeights:
    """Grunwald-Letnikov weights ``w_k = (-1)^k binom(alpha, k)``.

    ``w_0 = 1`` and ``w_k = w_{k-1} (1 - (alpha + 1)/k)``. The sequence is
    stored as a numpy array and extended lazily by :meth:`extend`.
    """

    alpha: float
    weights: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.weights) - 1

    def extend(self, n: int) -> "FracWeights":
        """Grow the cached prefix so that it covers indices ``0..n``."""
        if n <= self.n:
            return self
        k = np.arange(self.n + 1, n + 1, dtype=np.float64)
        factors = 1.0 - (self.alpha + 1.0) / k
        # cumprod applies the recurrence in index order, so each entry is bitwise
        # weights[k-1] * factor[k]
        new = np.cumprod(np.concatenate(([self.weights[-1]], factors)))[1:]
        self.weights = np.concatenate((self.weights, new))
        return self

    def __getitem__(self, k):
        return self.weights[k]

    def __len__(self) -> int:
        return len(self.weights)

    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.weights)


def gl_weights(alpha: float, n: int) -> FracWeights:
    """GL weights ``w_0..w_n`` for order ``alpha`` in (0, 1)."""
    alpha = _check_alpha(alpha)
    if n < 0:
        raise ValueError("n must be nonnegative")
    return FracWeights(alpha, np.ones(1)).extend(int(n))


def gl_weights_direct(alpha: float, n: int) -> np.ndarray:
    """Closed form ``Gamma(k - alpha) / (Gamma(-alpha) Gamma(k + 1))``.

    Evaluated with :func:`math.lgamma` so that it shares no code with the
    recurrence in :func:`gl_weights`.
    """
    alpha = _check_alpha(alpha)
    g_neg = math.gamma(-alpha)  # negative for alpha in (0, 1)
    out = np.empty(n + 1)
    out[0] = 1.0
    for k in range(1, n + 1):
        mag = math.exp(math.lgamma(k - alpha) - math.lgamma(k + 1.0))
        out[k] = mag / g_neg
    return out


def gl_weight_asymptotic(alpha: float, k: int) -> float:
    """Two-term large-``k`` approximation of the GL weight ``w_k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return k ** (-alpha - 1.0) / gamma(-alpha) * (1.0 + alpha * (alpha + 1.0) / (2.0 * k))


@dataclass
class RlKernels:
    """Power-law memory kernels ``psi_k = Gamma(k + alpha) / (Gamma(alpha) k!)``."""

    alpha: float
    kernels: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.kernels) - 1

    def extend(self, n: int) -> "RlKernels":
        if n <= self.n:
            return self
        k = np.arange(self.n + 1, n + 1, dtype=np.float64)
        factors = (k - 1.0 + self.alpha) / k
        new = np.cumprod(np.concatenate(([self.kernels[-1]], factors)))[1:]
        self.kernels = np.concatenate((self.kernels, new))
        return self

    def __getitem__(self, k):
        return self.kernels[k]

    def __len__(self) -> int:
        return len(self.kernels)

    def generating_sum(self, z: float) -> float:
        """Partial sum of ``psi_k z^k`` over the cached prefix."""
        powers = z ** np.arange(len(self.kernels), dtype=np.float64)
        return kahan_sum(self.kernels * powers)


def rl_kernels(alpha: float, n: int) -> RlKernels:
    alpha = _check_alpha(alpha, allow_one=True)
    if n < 0:
        raise ValueError("n must be nonnegative")
    return RlKernels(alpha, np.ones(1)).extend(int(n))


@dataclass(frozen=True)
class StabilizationConstants:
    """Constants used by the recursive fractional TD-error.

    eta : ``1 / Gamma(1 - alpha)``
    c_alpha : ``zeta(1 + alpha) / |Gamma(-alpha)|``, the bound on sum |w_k|
    kappa : ``alpha (1 - alpha) / (2 Gamma(2 - alpha))``
    """

    alpha: float
    eta: float
    c_alpha: float
    kappa: float
    eps_tol: float = 1e-8


def stabilization_constants(alpha: float, eps_tol: float = 1e-8) -> StabilizationConstants:
    alpha = _check_alpha(alpha)
    if not eps_tol > 0:
        raise ValueError("eps_tol must be positive")
    return StabilizationConstants(
        alpha=alpha,
        eta=1.0 / gamma(1.0 - alpha),
        c_alpha=zeta(1.0 + alpha) / abs(gamma(-alpha)),
        kappa=alpha * (1.0 - alpha) / (2.0 * gamma(2.0 - alpha)),
        eps_tol=float(eps_tol),
    )


@numba.njit(cache=True)
def _kahan_kernel(values):
    s = 0.0
    c = 0.0
    for x in values:
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
    return s + c


def kahan_sum(values: Iterable[float]) -> float:
    """Compensated summation of a finite sequence.

    Uses the Kahan-Babuska (Neumaier) update, which also recovers terms
    that are larger than the running sum.
    """
    if isinstance(values, np.ndarray) and values.dtype == np.float64 and values.ndim == 1:
        return float(_kahan_kernel(values))
    arr = np.asarray(values if isinstance(values, np.ndarray) else list(values), dtype=np.float64).ravel()
    return float(_kahan_kernel(arr))


class KahanAccumulator:
    """Running compensated sum for values that arrive one at a time."""

    __slots__ = ("total", "_comp")

    def __init__(self, total: float = 0.0):
        self.total = float(total)
        self._comp = 0.0

    def add(self, x: float) -> float:
        s = self.total
        t = s + x
        if abs(s) >= abs(x):
            self._comp += (s - t) + x
        else:
            self._comp += (x - t) + s
        self.total = t
        return t + self._comp

    @property
    def value(self) -> float:
        return self.total + self._comp

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"KahanAccumulator({self.value!r})"
