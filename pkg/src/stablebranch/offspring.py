"""Critical offspring laws: construction, exact sampling, and the functional f(v).

Two families are supported:

* ``stable``: the exact-tail family ``P(K >= n) = kappa * n**-alpha`` for every
  integer ``n >= 2``, with ``p_0`` and ``p_1`` fixed by mass and criticality.
* ``explicit``: a finite probability vector ``p_0 .. p_K`` with mean one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import gammaincc, zeta

from .rng import next_uniform
from .errors import (
    DegenerateLaw,
    DomainError,
    InfeasibleParameters,
    InvalidAlpha,
    NotADistribution,
    NotCritical,
    WrongKind,
)

STABLE = 0
EXPLICIT = 1

# direct-summation cutoff for the stable family; the remainder is closed analytically
_TAIL_CUTOFF = 1 << 16


@dataclass(frozen=True)
class OffspringLaw:
    kind: str
    p0: float
    p1: float
    mean: float
    alpha: float | None = None
    kappa: float | None = None
    p: tuple = ()
    sigma2: float | None = None
    _cdf: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def kind_code(self) -> int:
        return STABLE if self.kind == "stable" else EXPLICIT

    def kernel_args(self):
        """Flat argument tuple consumed by the jitted samplers."""
        a = self.alpha if self.alpha is not None else 0.0
        k = self.kappa if self.kappa is not None else 0.0
        cdf = self._cdf if self._cdf is not None else np.ones(1)
        return self.kind_code, self.p0, self.p1, a, k, cdf

    def tail(self, n: int) -> float:
        """P(K >= n)."""
        if n <= 0:
            return 1.0
        if n == 1:
            return 1.0 - self.p0
        if self.kind == "stable":
            return self.kappa * n ** (-self.alpha)
        return float(sum(self.p[n:]))

    def pmf(self, k: int) -> float:
        if k < 0:
            return 0.0
        if self.kind == "explicit":
            return self.p[k] if k < len(self.p) else 0.0
        if k == 0:
            return self.p0
        if k == 1:
            return self.p1
        return self.kappa * (k ** (-self.alpha) - (k + 1) ** (-self.alpha))


def _check_alpha(alpha):
    if not (1.0 < alpha < 2.0):
        raise InvalidAlpha(f"alpha must lie in (1, 2), got {alpha}")


def make_stable_tail(alpha: float, kappa: float) -> OffspringLaw:
    """Critical law with ``P(K >= n) = kappa * n**-alpha`` exactly for ``n >= 2``.

    ``p_k = kappa * (k**-alpha - (k+1)**-alpha)`` for ``k >= 2``; ``p_0`` and
    ``p_1`` absorb the remaining mass so that the mean is exactly one.
    """
    alpha = float(alpha)
    kappa = float(kappa)
    _check_alpha(alpha)
    if not kappa > 0:
        raise InfeasibleParameters(f"kappa must be positive, got {kappa}")
    head = 2.0 ** (-alpha)
    zm1 = float(zeta(alpha, 1)) - 1.0
    s = kappa * (head + zm1)
    if s > 1.0:
        raise InfeasibleParameters(
            f"kappa*(2^-alpha + zeta(alpha) - 1) = {s:.6g} > 1; p_1 would be negative"
        )
    p1 = 1.0 - s
    p0 = kappa * zm1  # equals s - kappa * 2**-alpha
    if p1 >= 1.0:
        raise DegenerateLaw("p_1 = 1")
    mean = (1.0 - p0) + kappa * zm1
    return OffspringLaw(kind="stable", p0=p0, p1=p1, mean=mean, alpha=alpha, kappa=kappa)


def make_explicit(p) -> OffspringLaw:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise NotADistribution("probabilities must be a nonempty vector of nonnegative reals")
    mass = math.fsum(p)
    if abs(mass - 1.0) > 1e-12:
        raise NotADistribution(f"total mass {mass!r} differs from 1")
    k = np.arange(p.size, dtype=float)
    mean = math.fsum(k * p)
    if abs(mean - 1.0) > 1e-9:
        raise NotCritical(f"offspring mean {mean!r} differs from 1")
    p1 = float(p[1]) if p.size > 1 else 0.0
    if p1 >= 1.0:
        raise DegenerateLaw("p_1 = 1: the population never dies out")
    sigma2 = math.fsum(k * k * p) - 1.0
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return OffspringLaw(
        kind="explicit",
        p0=float(p[0]),
        p1=p1,
        mean=mean,
        p=tuple(float(x) for x in p),
        sigma2=sigma2,
        _cdf=cdf,
    )


@njit(cache=True, nogil=True)
def draw_offspring(kind, p0, p1, alpha, kappa, cdf, u):
    if kind == STABLE:
        if u < p0:
            return 0
        if u < p0 + p1:
            return 1
        v = 1.0 - u
        k = int(math.floor((kappa / v) ** (1.0 / alpha)))
        if k < 2:
            k = 2
        # pin the inversion boundary: K >= n exactly when v <= kappa * n**-alpha
        while kappa * (k + 1.0) ** (-alpha) >= v:
            k += 1
        while k > 2 and kappa * float(k) ** (-alpha) < v:
            k -= 1
        return k
    n = cdf.shape[0]
    for k in range(n):
        if u < cdf[k]:
            return k
    return n - 1


def sample_offspring(law: OffspringLaw, u: float) -> int:
    if not (0.0 < u < 1.0):
        raise DomainError(f"u must lie in (0, 1), got {u}")
    return int(draw_offspring(*law.kernel_args(), float(u)))


@njit(cache=True, nogil=True)
def _sample_many(kind, p0, p1, alpha, kappa, cdf, st, n):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = draw_offspring(kind, p0, p1, alpha, kappa, cdf, next_uniform(st))
    return out


def sample_many(law: OffspringLaw, stream, n: int) -> np.ndarray:
    """Draw ``n`` offspring counts from ``stream`` (a :class:`rng.Stream`)."""
    return _sample_many(*law.kernel_args(), stream.state, int(n))


@njit(cache=True, nogil=True)
def _stable_direct(alpha, s, cutoff):
    # sum_{n=2}^{cutoff-1} n^-alpha (1 - exp(-s (n-1)))
    acc = 0.0
    comp = 0.0
    for n in range(cutoff - 1, 1, -1):
        term = n ** (-alpha) * -math.expm1(-s * (n - 1))
        y = term - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
    return acc


def _stable_weighted_tail_sum(alpha: float, v: float) -> float:
    """sum_{n>=2} n^-alpha * (1 - (1-v)^(n-1)) for 0 < v < 1."""
    s = -math.log1p(-v)
    big_n = _TAIL_CUTOFF
    direct = _stable_direct(alpha, s, big_n)
    a1 = alpha - 1.0
    g = math.gamma(2.0 - alpha) * float(gammaincc(2.0 - alpha, s * big_n))
    integral = (big_n ** (-a1) * -math.expm1(-s * (big_n - 1)) + math.exp(s) * s**a1 * g) / a1
    e = math.exp(-s * (big_n - 1))
    h = big_n ** (-alpha) * (1.0 - e)
    dh = -alpha * big_n ** (-alpha - 1.0) * (1.0 - e) + big_n ** (-alpha) * s * e
    return direct + integral + 0.5 * h - dh / 12.0


def f_of_v(law: OffspringLaw, beta: float, v):
    """``beta * (sum_k p_k (1-v)^k - (1-v)) / v`` with ``f(0) = 0``.

    Evaluated through ``beta * sum_{n>=2} P(K>=n) (1 - (1-v)^(n-1))``, which
    has only nonnegative terms and therefore no cancellation as ``v -> 0``.
    Accepts a scalar or an array of ``v``.
    """
    arr = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("v must lie in [0, 1]")
    flat = arr.ravel()
    out = np.empty_like(flat)
    if law.kind == "explicit":
        tails = np.cumsum(np.asarray(law.p)[::-1])[::-1]  # tails[n] = P(K >= n)
        n = np.arange(2, tails.size)
        for i, x in enumerate(flat):
            if x == 0.0:
                out[i] = 0.0
            elif x == 1.0:
                out[i] = law.p0
            else:
                out[i] = math.fsum(tails[2:] * -np.expm1((n - 1) * math.log1p(-x)))
    else:
        for i, x in enumerate(flat):
            if x == 0.0:
                out[i] = 0.0
            elif x == 1.0:
                out[i] = law.p0
            else:
                out[i] = law.kappa * _stable_weighted_tail_sum(law.alpha, float(x))
    out *= beta
    if np.ndim(v) == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def survival_map(law: OffspringLaw, w):
    """``1 - G(1 - w)`` where ``G`` is the generating function; explicit laws only.

    Written as ``w * sum_{n>=1} P(K>=n) (1-w)^(n-1)`` so every term is
    nonnegative. This is the probability that at least one child "fires"
    when each child fires independently with probability ``w``.
    """
    if law.kind != "explicit":
        raise WrongKind("survival_map needs an explicit law")
    w = np.asarray(w, dtype=float)
    tails = np.cumsum(np.asarray(law.p)[::-1])[::-1]
    q = 1.0 - w
    acc = np.zeros_like(w)
    for t in tails[:0:-1]:  # Horner in (1 - w), from the highest index down to n = 1
        acc = acc * q + t
    return w * acc


def survival_map_derivative(law: OffspringLaw, w):
    """d/dw of :func:`survival_map`, i.e. ``G'(1 - w)``."""
    if law.kind != "explicit":
        raise WrongKind("survival_map_derivative needs an explicit law")
    w = np.asarray(w, dtype=float)
    p = np.asarray(law.p)
    q = 1.0 - w
    acc = np.zeros_like(w)
    for k in range(p.size - 1, 0, -1):
        acc = acc * q + k * p[k]
    return acc


def lemma2_constant(law: OffspringLaw, beta: float) -> float:
    """Small-v limit of ``f(v) / v**(alpha-1)``: ``beta*kappa*Gamma(2-alpha)/(alpha-1)``."""
    if law.kind != "stable":
        raise WrongKind("the small-v power law only exists for stable-tail laws")
    a = law.alpha
    return beta * law.kappa * math.gamma(2.0 - a) / (a - 1.0)
