"""Survival-curve estimation with censoring brackets, exponent fits and constant checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from .engine import Outcomes
from .errors import DomainError, GridBeyondStopThreshold, InsufficientData


def wilson_interval(k, n, confidence: float = 0.99):
    """Wilson score interval for ``k`` successes out of ``n``; vectorised over ``k``."""
    k = np.asarray(k, dtype=float)
    if n <= 0:
        raise DomainError("n must be positive")
    z = norm.ppf(0.5 + confidence / 2.0)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = np.where(k == 0, 0.0, np.clip(centre - half, 0.0, 1.0))
    hi = np.where(k == n, 1.0, np.clip(centre + half, 0.0, 1.0))
    return lo, hi


@dataclass
class TailEstimate:
    x_grid: np.ndarray
    n_trees: int
    counts_low: np.ndarray
    counts_high: np.ndarray
    p_low: np.ndarray
    p_high: np.ndarray
    ci_low: np.ndarray  # (len(x), 2) Wilson interval around p_low
    ci_high: np.ndarray  # (len(x), 2) Wilson interval around p_high
    censored_fraction: float = 0.0
    confidence: float = 0.99

    @property
    def p_mid(self) -> np.ndarray:
        return 0.5 * (self.p_low + self.p_high)

    @property
    def ci_lo(self) -> np.ndarray:
        """Lower confidence limit for the whole bracket."""
        return self.ci_low[:, 0]

    @property
    def ci_hi(self) -> np.ndarray:
        """Upper confidence limit for the whole bracket."""
        return self.ci_high[:, 1]

    def check_invariants(self):
        assert np.all(self.p_low >= 0) and np.all(self.p_high <= 1)
        assert np.all(self.p_low <= self.p_high)
        assert np.all(np.diff(self.p_low) <= 0) and np.all(np.diff(self.p_high) <= 0)
        assert np.all(self.p_high - self.p_low <= self.censored_fraction + 1e-15)


def estimate_tail(outcomes, x_grid, confidence: float = 0.99) -> TailEstimate:
    """Bracket ``P(M >= x)`` on ``x_grid``.

    Trees stopped for budget reasons only give a lower bound on ``M``: the
    low count ignores that they might have gone further, the high count
    assumes they did.
    """
    if not isinstance(outcomes, Outcomes):
        outcomes = Outcomes.from_list(outcomes)
    x = np.asarray(x_grid, dtype=float)
    if x.ndim != 1 or x.size == 0 or np.any(x <= 0) or np.any(np.diff(x) <= 0):
        raise DomainError("x_grid must be strictly increasing and positive")
    n = len(outcomes)
    if n == 0:
        raise InsufficientData("no outcomes")
    if outcomes.stopped_early.any():
        # with early stopping, m_observed is only trustworthy up to the threshold
        x_stop = outcomes.stop_threshold
        if x_stop is None:
            x_stop = outcomes.m_observed[outcomes.stopped_early].min()
        if x[-1] > x_stop:
            raise GridBeyondStopThreshold(f"grid point {x[-1]} exceeds the stop threshold {x_stop}")
    m = np.sort(outcomes.m_observed)
    m_cens = np.sort(outcomes.m_observed[outcomes.censored])
    low = n - np.searchsorted(m, x, side="left")
    cens_below = np.searchsorted(m_cens, x, side="left")
    high = low + cens_below
    lo_ci = np.column_stack(wilson_interval(low, n, confidence))
    hi_ci = np.column_stack(wilson_interval(high, n, confidence))
    est = TailEstimate(
        x_grid=x,
        n_trees=n,
        counts_low=low,
        counts_high=high,
        p_low=low / n,
        p_high=high / n,
        ci_low=lo_ci,
        ci_high=hi_ci,
        censored_fraction=m_cens.size / n,
        confidence=confidence,
    )
    est.check_invariants()
    return est


def fit_exponent(est: TailEstimate, window: tuple[float, float]) -> tuple[float, float]:
    """Weighted least-squares slope of ``log p_mid`` against ``log x`` inside ``window``.

    Weights are inverse relative variances ``n p / (1 - p)``. Returns the slope
    and its standard error.
    """
    x_min, x_max = window
    sel = (est.x_grid >= x_min) & (est.x_grid <= x_max) & (est.counts_low >= 100)
    p = est.p_mid[sel]
    sel_p = p < 1.0
    if np.count_nonzero(sel_p) < 3:
        raise InsufficientData("need at least three grid points with 100 or more hits in the window")
    lx = np.log(est.x_grid[sel][sel_p])
    ly = np.log(p[sel_p])
    w = est.n_trees * p[sel_p] / (1.0 - p[sel_p])
    xbar = np.sum(w * lx) / np.sum(w)
    ybar = np.sum(w * ly) / np.sum(w)
    sxx = np.sum(w * (lx - xbar) ** 2)
    slope = np.sum(w * (lx - xbar) * (ly - ybar)) / sxx
    return float(slope), float(np.sqrt(1.0 / sxx))


class ConstantRow(NamedTuple):
    x: float
    scaled_low: float
    scaled_high: float
    rel_dev: float


def compare_constant(est: TailEstimate, exponent: float, c_star: float) -> list[ConstantRow]:
    """Rows of ``x**exponent * p`` for both bracket ends and the midpoint's deviation from ``c_star``."""
    order = np.argsort(est.x_grid)
    rows = []
    for i in order:
        x = float(est.x_grid[i])
        s = x**exponent
        lo = s * float(est.p_low[i])
        hi = s * float(est.p_high[i])
        rows.append(ConstantRow(x, lo, hi, (0.5 * (lo + hi) - c_star) / c_star))
    return rows
