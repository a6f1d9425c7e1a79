"""Closed-form constants and deterministic reference solutions.

The two numerical solvers here never consult the closed-form profile except
where noted: :func:`solve_bvp_shooting` uses it only to break ties when a
trial slope survives the whole integration window, and
:func:`discrete_fixed_point` uses nothing but the offspring law and step law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import solve_banded

from .errors import (
    DomainError,
    InvalidAlpha,
    MissingSigma2,
    NegativeY,
    NotConverged,
    ShootingBracketFailure,
    WrongKind,
)
from .offspring import OffspringLaw, f_of_v, survival_map, survival_map_derivative


@dataclass(frozen=True)
class TheoryParams:
    alpha: float | None = None
    kappa: float | None = None
    beta: float = 1.0
    eta2: float = 1.0
    sigma2: float | None = None

    def __post_init__(self):
        if not (self.beta > 0 and self.eta2 > 0):
            raise DomainError("beta and eta2 must be positive")
        if self.alpha is not None and not (1.0 < self.alpha < 2.0):
            raise InvalidAlpha(f"alpha must lie in (1, 2), got {self.alpha}")
        if self.kappa is not None and not self.kappa > 0:
            raise DomainError("kappa must be positive")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise DomainError("sigma2 must be positive")

    def _stable(self):
        if self.alpha is None or self.kappa is None:
            raise DomainError("alpha and kappa are required for stable-branching quantities")
        return self.alpha, self.kappa


def branching_constant(params: TheoryParams) -> float:
    """``beta*kappa*Gamma(2-alpha)/(alpha-1)``, the small-v coefficient of f."""
    a, k = params._stable()
    return params.beta * k * math.gamma(2.0 - a) / (a - 1.0)


def theta(params: TheoryParams) -> float:
    a, k = params._stable()
    return math.sqrt(params.beta * k * math.gamma(2.0 - a) * (a - 1.0) / (params.eta2 * (a + 1.0)))


def limit_constant(params: TheoryParams) -> float:
    """Limit of ``x**(2/(alpha-1)) * P(M >= x)``."""
    a, k = params._stable()
    base = (a + 1.0) * params.eta2 / (params.beta * k * (a - 1.0) * math.gamma(2.0 - a))
    return base ** (1.0 / (a - 1.0))


def finite_variance_constant(params: TheoryParams, discrete: bool) -> float:
    """``6*eta2/sigma2`` for the branching random walk, ``6*eta2/(beta*sigma2)`` in continuous time.

    The continuous-time form reduces to ``6/sigma2`` for unit rate and unit
    variance; the rate dependence is an extrapolation, see the README.
    """
    if params.sigma2 is None:
        raise MissingSigma2("sigma2 is required for the finite-variance constant")
    if discrete:
        return 6.0 * params.eta2 / params.sigma2
    return 6.0 * params.eta2 / (params.beta * params.sigma2)


def phi_closed_form(y, params: TheoryParams, exponent: float | None = None):
    """``(theta*y + 1) ** (-2/(alpha-1))``; ``exponent`` overrides the power (for detector checks)."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0):
        raise NegativeY("y must be nonnegative")
    p = 2.0 / (params.alpha - 1.0) if exponent is None else exponent
    out = (theta(params) * arr + 1.0) ** (-p)
    return float(out) if np.ndim(y) == 0 else out


def ode_residual(params: TheoryParams, y_grid, exponent: float | None = None, relative: bool = True) -> float:
    """Max residual of ``(eta2/2) phi'' = C phi**alpha`` for the closed form.

    ``phi''`` is taken analytically. With ``relative=True`` each residual is
    divided by ``C phi**alpha``.
    """
    y = np.asarray(y_grid, dtype=float)
    if np.any(y < 0):
        raise NegativeY("y must be nonnegative")
    a = params.alpha
    p = 2.0 / (a - 1.0) if exponent is None else exponent
    th = theta(params)
    c = branching_constant(params)
    base = th * y + 1.0
    phi = base ** (-p)
    phi2 = p * (p + 1.0) * th * th * base ** (-p - 2.0)
    rhs = c * phi**a
    res = np.abs(0.5 * params.eta2 * phi2 - rhs)
    if relative:
        res = res / rhs
    return float(res.max())


# --- shooting -----------------------------------------------------------------

_STEEP = -1
_SHALLOW = 1
_UNDECIDED = 0


@njit(cache=True)
def _accel(phi, coef, alpha, log_v, log_f, tabulated):
    if phi <= 0.0:
        return 0.0
    if tabulated:
        lv = math.log(phi)
        if lv >= log_v[-1]:
            f = math.exp(log_f[-1])
        elif lv <= log_v[0]:
            f = 0.0
        else:
            f = math.exp(np.interp(lv, log_v, log_f))
        return coef * f * phi
    return coef * phi**alpha


@njit(cache=True)
def _integrate(slope, h, n, coef, alpha, log_v, log_f, tabulated, out, stop):
    """RK4 for ``phi'' = accel(phi)`` from ``(1, slope)``.

    With ``stop`` set, returns at the first sign event (zero crossing or upturn).
    """
    y0 = 1.0
    y1 = slope
    c0 = 0.0  # Kahan compensation terms
    c1 = 0.0
    out[0] = y0
    for i in range(n):
        k1a = y1
        k1b = _accel(y0, coef, alpha, log_v, log_f, tabulated)
        k2a = y1 + 0.5 * h * k1b
        k2b = _accel(y0 + 0.5 * h * k1a, coef, alpha, log_v, log_f, tabulated)
        k3a = y1 + 0.5 * h * k2b
        k3b = _accel(y0 + 0.5 * h * k2a, coef, alpha, log_v, log_f, tabulated)
        k4a = y1 + h * k3b
        k4b = _accel(y0 + h * k3a, coef, alpha, log_v, log_f, tabulated)
        d0 = h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a) - c0
        t0 = y0 + d0
        c0 = (t0 - y0) - d0
        y0 = t0
        d1 = h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b) - c1
        t1 = y1 + d1
        c1 = (t1 - y1) - d1
        y1 = t1
        out[i + 1] = y0
        if not stop:
            continue
        if y0 <= 0.0:
            return _STEEP, i + 1
        if y1 >= 0.0:
            return _SHALLOW, i + 1
    return _UNDECIDED, n


@dataclass
class BVPSolution:
    y: np.ndarray
    phi: np.ndarray
    slope: float
    iterations: int
    step: float


def _shoot(coef, alpha, h, n, far_target, log_v, log_f, tabulated, max_expand=60, max_bisect=200):
    out = np.empty(n + 1)
    dummy = (log_v, log_f, tabulated)

    def classify(s):
        code, _ = _integrate(s, h, n, coef, alpha, *dummy, out, True)
        if code == _UNDECIDED:
            if far_target is None:
                return _SHALLOW
            return _SHALLOW if out[n] > far_target else _STEEP
        return code

    hi = 0.0  # a flat start always turns upward
    lo = -1.0
    for _ in range(max_expand):
        if classify(lo) == _STEEP:
            break
        lo *= 2.0
    else:
        raise ShootingBracketFailure(f"no steep slope found down to {lo}", interval=(lo, hi))
    if classify(hi) != _SHALLOW:
        raise ShootingBracketFailure("zero slope did not overshoot", interval=(lo, hi))
    it = 0
    while it < max_bisect:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if classify(mid) == _STEEP:
            lo = mid
        else:
            hi = mid
        it += 1
    # the shallow side never crosses zero, so the full trajectory is well defined
    _integrate(hi, h, n, coef, alpha, *dummy, out, False)
    return hi, out, it


def _grid(y_max, grid_step):
    n = int(math.ceil(y_max / grid_step - 1e-9))
    return n, y_max / n


def solve_bvp_shooting(params: TheoryParams, y_max: float, grid_step: float = 1e-3) -> BVPSolution:
    """Solve ``(eta2/2) phi'' = C phi**alpha``, ``phi(0) = 1``, ``phi(inf) = 0`` by shooting.

    Bisection on ``phi'(0)`` separates slopes whose trajectory crosses zero
    from slopes whose trajectory turns upward. A slope that does neither
    before ``y_max`` is sorted by comparing ``phi(y_max)`` with the known
    decay magnitude there.
    """
    th = theta(params)
    if y_max < 10.0 / th - 1e-12:
        raise DomainError(f"y_max must be at least 10/theta = {10.0 / th:.6g}")
    if not 0 < grid_step <= 0.01:
        raise DomainError("grid_step must lie in (0, 0.01]")
    n, h = _grid(y_max, grid_step)
    coef = 2.0 * branching_constant(params) / params.eta2
    target = phi_closed_form(y_max, params)
    empty = np.zeros(2)
    slope, phi, it = _shoot(coef, params.alpha, h, n, target, empty, empty, False)
    y = np.linspace(0.0, y_max, n + 1)
    return BVPSolution(y=y, phi=phi, slope=slope, iterations=it, step=h)


def bvp_convergence(params: TheoryParams, y_max: float, steps) -> tuple[np.ndarray, np.ndarray]:
    """Max error against the closed form on ``[0, y_max/2]`` and observed orders for a step sequence."""
    errs = []
    hs = []
    for h in steps:
        sol = solve_bvp_shooting(params, y_max, h)
        half = sol.y <= 0.5 * y_max + 1e-12
        errs.append(np.max(np.abs(sol.phi[half] - phi_closed_form(sol.y[half], params))))
        hs.append(sol.step)
    errs = np.array(errs)
    hs = np.array(hs)
    orders = np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])
    return errs, orders


def tail_profile_bbm(
    law: OffspringLaw,
    beta: float,
    eta2: float,
    x_grid,
    grid_step: float = 1e-3,
    horizon: float | None = None,
    table_size: int = 4001,
) -> np.ndarray:
    """``P(M >= x)`` for branching Brownian motion at finite ``x``.

    Solves ``(eta2/2) v'' = f(v) v`` with ``v(0) = 1`` and ``v`` decreasing to
    zero, by the same shooting scheme as :func:`solve_bvp_shooting` but with
    the exact ``f`` of the law (tabulated on a log grid) and no far-field
    target. Valid for ``x`` well inside ``horizon`` (default four times the
    largest grid point) and while ``v(x)`` stays above roughly 1e-5: the
    initial slope is only resolved to an ulp, and the growing mode turns
    that into an absolute error that swamps smaller values.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if np.any(x_grid < 0):
        raise NegativeY("x must be nonnegative")
    horizon = 4.0 * float(x_grid.max()) if horizon is None else horizon
    log_v = np.linspace(-60.0, 0.0, table_size)
    fv = f_of_v(law, 1.0, np.exp(log_v))
    log_f = np.log(np.maximum(fv, 1e-300))
    coef = 2.0 * beta / eta2
    n, h = _grid(horizon, grid_step)
    _, phi, _ = _shoot(coef, 0.0, h, n, None, log_v, log_f, True)
    y = np.linspace(0.0, horizon, n + 1)
    return np.interp(x_grid, y, phi)


# --- lattice fixed point ------------------------------------------------------


@dataclass
class FixedPointResult:
    x: np.ndarray
    v: np.ndarray
    iterations: int
    history: list | None = None

    @property
    def u(self) -> np.ndarray:
        return 1.0 - self.v

    def at(self, x):
        return self.v[np.asarray(x, dtype=int) - 1]


def _step_law(mu):
    if hasattr(mu, "values"):
        vals, probs = mu.values, mu.probs
    else:
        vals, probs = mu
    vals = np.asarray(vals, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any(vals != np.round(vals)):
        raise DomainError("step law must live on the integers")
    if abs(math.fsum(vals * probs)) > 1e-12:
        raise DomainError("step law must have mean zero")
    return vals.astype(int), probs


def discrete_fixed_point(
    law: OffspringLaw,
    mu,
    x_max: int,
    tol: float = 1e-12,
    max_iter: int = 10**6,
    method: str = "newton",
    keep_history: bool = False,
) -> FixedPointResult:
    """``v(x) = P(M >= x)`` for the branching random walk, ``x = 1 .. x_max``.

    With ``w(x) = sum_y mu_y v~(x + y)``, where ``v~ = 1`` on ``(-inf, 0]``,
    ``v~ = v`` on ``[1, x_max]`` and ``v~ = 0`` beyond ``x_max``, the fixed
    point is ``v = 1 - G(1 - w)``. Iteration starts from ``v = 1``
    (equivalently ``u = 1 - v = 0``) and decreases monotonically to the
    largest fixed point in ``v``. ``method="picard"`` applies the map
    directly; ``"newton"`` solves the linearised banded system each step,
    which keeps the monotone ordering and converges in tens of iterations.
    """
    if law.kind != "explicit":
        raise WrongKind("the lattice fixed point needs an explicit offspring law")
    if method not in ("newton", "picard"):
        raise ValueError(f"unknown method {method!r}")
    steps, probs = _step_law(mu)
    x_max = int(x_max)
    lo_off = max(0, -int(steps.min()))
    hi_off = max(0, int(steps.max()))
    idx = np.arange(1, x_max + 1)
    v = np.ones(x_max)
    history = [v.copy()] if keep_history else None

    def spread(v):
        ext = np.concatenate([np.ones(lo_off + 1), v, np.zeros(hi_off)])
        # ext[j] holds v~(j - lo_off); site x sits at j = x + lo_off
        w = np.zeros(x_max)
        for s, p in zip(steps, probs):
            w += p * ext[idx + lo_off + s]
        return w

    for it in range(1, max_iter + 1):
        w = spread(v)
        h_v = survival_map(law, w)
        if method == "picard":
            new = h_v
        else:
            d = survival_map_derivative(law, w)
            # banded I - diag(d) * M, with M[x, x+s] = mu_s inside the window
            ab = np.zeros((lo_off + hi_off + 1, x_max))
            ab[hi_off] = 1.0
            for s, p in zip(steps, probs):
                row = hi_off - s
                if s > 0:
                    ab[row, s:] -= d[:-s] * p
                elif s < 0:
                    ab[row, :s] -= d[-s:] * p
                else:
                    ab[row] -= d * p
            new = v + solve_banded((lo_off, hi_off), ab, h_v - v)
        change = float(np.max(np.abs(new - v)))
        v = new
        if keep_history:
            history.append(v.copy())
        if change < tol:
            return FixedPointResult(x=idx, v=v, iterations=it, history=history)
    raise NotConverged(f"no convergence after {max_iter} iterations (last change {change:.3g})")
