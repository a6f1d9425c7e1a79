"""Mean-zero spatial motions with exact (endpoint, running maximum) sampling.

Brownian segments use the joint law of the endpoint and the maximum: given the
endpoint ``W`` of a Brownian path of variance ``s2 = eta2*T``, its maximum is
``(W + sqrt(W**2 - 2*s2*log(U))) / 2`` with ``U`` uniform. The compound
Poisson kind applies the same transform to each diffusive stretch between
jumps, so no kind introduces time-discretisation bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DomainError, InvalidAlpha, NonpositiveDuration, NonzeroMean
from .rng import next_exponential, next_normal, next_uniform

BROWNIAN = 0
LATTICE = 1
COMPOUND_POISSON = 2

_KINDS = {"brownian": BROWNIAN, "lattice": LATTICE, "compound_poisson": COMPOUND_POISSON}


@dataclass(frozen=True)
class MotionModel:
    kind: str
    eta2_total: float
    diffusion_eta2: float = 0.0
    drift: float = 0.0
    jump_rate: float = 0.0
    values: tuple = ()
    probs: tuple = ()
    _cdf: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def kind_code(self) -> int:
        return _KINDS[self.kind]

    @property
    def discrete_time(self) -> bool:
        return self.kind == "lattice"

    @property
    def mean_per_unit_time(self) -> float:
        m = math.fsum(v * p for v, p in zip(self.values, self.probs))
        if self.kind == "lattice":
            return m
        return self.drift + self.jump_rate * m

    def kernel_args(self):
        vals = np.asarray(self.values if self.values else (0.0,), dtype=float)
        cdf = self._cdf if self._cdf is not None else np.ones(1)
        return self.kind_code, self.diffusion_eta2, self.drift, self.jump_rate, vals, cdf


def _finite_law(values, probs):
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape or values.ndim != 1 or values.size == 0:
        raise DomainError("values and probs must be equal-length nonempty vectors")
    if np.any(probs < 0) or abs(math.fsum(probs) - 1.0) > 1e-12:
        raise DomainError("probs must be a probability vector")
    if not np.all(np.isfinite(values)):
        raise DomainError("support must be bounded")
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return values, probs, cdf


def brownian(eta2: float = 1.0) -> MotionModel:
    if not eta2 > 0:
        raise DomainError(f"eta2 must be positive, got {eta2}")
    return MotionModel(kind="brownian", eta2_total=float(eta2), diffusion_eta2=float(eta2))


def lattice_walk(values, probs) -> MotionModel:
    """Discrete-time walk with one step per generation; ``values`` must be integers."""
    values, probs, cdf = _finite_law(values, probs)
    if np.any(values != np.round(values)):
        raise DomainError("lattice steps must be integers")
    eta2 = math.fsum(values * values * probs)
    if not eta2 > 0:
        raise DomainError("lattice walk has zero variance")
    return MotionModel(
        kind="lattice",
        eta2_total=eta2,
        values=tuple(values.tolist()),
        probs=tuple(probs.tolist()),
        _cdf=cdf,
    )


def compound_poisson_diffusion(
    jump_rate: float,
    jump_values,
    jump_probs,
    diffusion_eta2: float = 0.0,
    center: bool = True,
) -> MotionModel:
    """Brownian part plus compound Poisson jumps from a bounded finite law.

    With ``center=True`` a compensating drift ``-jump_rate * E[jump]`` is added
    so that the process has mean zero.
    """
    if jump_rate < 0 or diffusion_eta2 < 0:
        raise DomainError("jump_rate and diffusion_eta2 must be nonnegative")
    values, probs, cdf = _finite_law(jump_values, jump_probs)
    second = math.fsum(values * values * probs)
    drift = -jump_rate * math.fsum(values * probs) if center else 0.0
    eta2 = diffusion_eta2 + jump_rate * second
    if not eta2 > 0:
        raise DomainError("total variance per unit time must be positive")
    return MotionModel(
        kind="compound_poisson",
        eta2_total=eta2,
        diffusion_eta2=float(diffusion_eta2),
        drift=drift,
        jump_rate=float(jump_rate),
        values=tuple(values.tolist()),
        probs=tuple(probs.tolist()),
        _cdf=cdf,
    )


@njit(cache=True, nogil=True)
def _pick(vals, cdf, u):
    n = cdf.shape[0]
    for i in range(n):
        if u < cdf[i]:
            return vals[i]
    return vals[n - 1]


@njit(cache=True, nogil=True)
def bridge_segment(eta2, drift, t, st):
    """Endpoint and maximum of ``drift*s + sqrt(eta2)*B_s`` over ``[0, t]``."""
    w = drift * t
    if eta2 > 0.0:
        w += math.sqrt(eta2 * t) * next_normal(st)
        m = 0.5 * (w + math.sqrt(w * w - 2.0 * eta2 * t * math.log(next_uniform(st))))
    else:
        m = w if w > 0.0 else 0.0
    return w, m


@njit(cache=True, nogil=True)
def draw_segment(kind, eta2, drift, rate, vals, cdf, duration, st):
    if kind == BROWNIAN:
        return bridge_segment(eta2, 0.0, duration, st)
    if kind == LATTICE:
        pos = 0.0
        top = 0.0
        for _ in range(int(duration)):
            pos += _pick(vals, cdf, next_uniform(st))
            if pos > top:
                top = pos
        return pos, top
    # compound Poisson plus diffusion
    pos = 0.0
    top = 0.0
    t = 0.0
    while True:
        gap = next_exponential(st, rate) if rate > 0.0 else np.inf
        if t + gap >= duration:
            w, m = bridge_segment(eta2, drift, duration - t, st)
            if pos + m > top:
                top = pos + m
            pos += w
            break
        w, m = bridge_segment(eta2, drift, gap, st)
        if pos + m > top:
            top = pos + m
        pos += w + _pick(vals, cdf, next_uniform(st))
        if pos > top:
            top = pos
        t += gap
    return pos, top


@njit(cache=True, nogil=True)
def _draw_many(kind, eta2, drift, rate, vals, cdf, duration, st, n):
    w = np.empty(n)
    m = np.empty(n)
    for i in range(n):
        w[i], m[i] = draw_segment(kind, eta2, drift, rate, vals, cdf, duration, st)
    return w, m


def _check_duration(model, duration):
    if model.discrete_time:
        if int(duration) != duration or duration < 1:
            raise NonpositiveDuration(f"lattice segments need a positive integer step count, got {duration}")
    elif not duration > 0:
        raise NonpositiveDuration(f"duration must be positive, got {duration}")


def sample_segment(model: MotionModel, duration, rng):
    """Return ``(displacement, path_max)`` for one segment drawn from ``rng``.

    ``rng`` is a :class:`stablebranch.rng.Stream`. ``duration`` is a time for
    the continuous kinds and a step count for the lattice kind.
    """
    _check_duration(model, duration)
    w, m = draw_segment(*model.kernel_args(), float(duration), rng.state)
    return float(w), float(m)


def sample_segments(model: MotionModel, duration, rng, n: int):
    """Vectorised :func:`sample_segment`; returns two arrays of length ``n``."""
    _check_duration(model, duration)
    return _draw_many(*model.kernel_args(), float(duration), rng.state, int(n))


@dataclass(frozen=True)
class MomentReport:
    mean: float
    eta2_total: float
    r_threshold: float
    moment_condition_met: bool


def validate_moments(model: MotionModel, alpha: float) -> MomentReport:
    """Check mean zero and finite variance; all kinds have bounded jumps, so every moment is finite."""
    if not (1.0 < alpha < 2.0):
        raise InvalidAlpha(f"alpha must lie in (1, 2), got {alpha}")
    mean = model.mean_per_unit_time
    if abs(mean) > 1e-12:
        raise NonzeroMean(f"motion has mean {mean!r} per unit time")
    return MomentReport(
        mean=mean,
        eta2_total=model.eta2_total,
        r_threshold=2.0 * alpha / (alpha - 1.0),
        moment_condition_met=True,
    )
