import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stablebranch.errors import (
    DegenerateLaw,
    DomainError,
    InfeasibleParameters,
    InvalidAlpha,
    NotADistribution,
    NotCritical,
    WrongKind,
)
from stablebranch.offspring import (
    f_of_v,
    lemma2_constant,
    make_explicit,
    make_stable_tail,
    sample_many,
    sample_offspring,
    survival_map,
    survival_map_derivative,
)
from stablebranch.rng import Stream

mp.mp.dps = 40

# frozen mpmath values for StableTail(1.5, 0.2)
P0_ORACLE = 0.32247506973709766
P1_ORACLE = 0.60681425214424766
LEMMA2_ORACLE = 0.70898154036220641  # 0.2 * sqrt(pi) / 0.5


def f_oracle(alpha, kappa, beta, v):
    """beta*kappa*sum_{n>=2} n^-a (1-(1-v)^(n-1)) through the polylogarithm."""
    a = mp.mpf(alpha)
    q = 1 - mp.mpf(v)
    s = (mp.zeta(a) - 1) - (mp.polylog(a, q) - q) / q
    return float(beta * kappa * s)


@st.composite
def feasible(draw):
    a = draw(st.floats(1.05, 1.95))
    cap = 1.0 / (2.0**-a + float(mp.zeta(a)) - 1.0)
    k = draw(st.floats(0.01, 0.999)) * cap
    return a, k


def test_stable_tail_example_values():
    law = make_stable_tail(1.5, 0.2)
    assert law.p0 == pytest.approx(P0_ORACLE, rel=1e-14)
    assert law.p1 == pytest.approx(P1_ORACLE, rel=1e-14)
    assert law.tail(2) == pytest.approx(0.2 * 2**-1.5, rel=1e-15)
    assert abs(law.p0 - 0.322475) < 5e-7 and abs(law.p1 - 0.606814) < 5e-7
    assert law.mean == pytest.approx(1.0, abs=1e-15)
    assert law.sigma2 is None


def test_p0_p1_against_mpmath():
    for a, k in [(1.5, 0.2), (1.2, 0.05), (1.9, 0.5)]:
        law = make_stable_tail(a, k)
        zm1 = mp.zeta(a) - 1
        assert law.p0 == pytest.approx(float(k * zm1), rel=1e-13)
        assert law.p1 == pytest.approx(float(1 - k * (mp.mpf(2) ** -a + zm1)), rel=1e-13)


def test_mass_and_mean_by_independent_summation():
    law = make_stable_tail(1.5, 0.2)
    a, k = 1.5, 0.2
    big = 10**6
    j = np.arange(2, big + 1, dtype=float)
    pk = k * (j**-a - (j + 1) ** -a)
    # remainders: sum_{j>K} p_j = k(K+1)^-a ; sum_{j>K} j p_j = k(K+1)^(1-a) + k*zeta(a, K+2)
    mass = math.fsum(pk) + law.p0 + law.p1 + k * (big + 1) ** -a
    mean = math.fsum(j * pk) + law.p1 + k * (big + 1) ** (1 - a) + float(k * mp.zeta(a, big + 2))
    assert abs(mass - 1.0) < 1e-10
    assert abs(mean - 1.0) < 1e-10


def test_infeasible_and_invalid():
    with pytest.raises(InfeasibleParameters) as e:
        make_stable_tail(1.5, 10.0)
    assert float(str(e.value).split("= ")[1].split()[0]) == pytest.approx(19.66, abs=0.01)
    with pytest.raises(InvalidAlpha):
        make_stable_tail(2.0, 0.1)
    with pytest.raises(InvalidAlpha):
        make_stable_tail(1.0, 0.1)


@given(feasible(), st.sampled_from([2, 10, 1000]))
def test_tail_identity(ak, n):
    a, k = ak
    law = make_stable_tail(a, k)
    # telescoping partial sum up to K plus the exact remainder kappa*(K+1)^-a
    big = 5000
    part = math.fsum(law.pmf(j) for j in range(n, big + 1)) + k * (big + 1) ** -a
    assert part * n**a == pytest.approx(k, rel=1e-9)
    assert law.p0 + law.p1 + law.tail(2) == pytest.approx(1.0, abs=1e-12)
    assert 0 <= law.p0 <= 1 and 0 <= law.p1 < 1


def test_explicit_examples():
    assert make_explicit([0.5, 0, 0.5]).sigma2 == 1.0
    assert make_explicit([0.25, 0.5, 0.25]).sigma2 == pytest.approx(0.5)
    with pytest.raises(NotCritical):
        make_explicit([0.3, 0.5, 0.2])
    with pytest.raises(NotADistribution):
        make_explicit([0.5, 0.0, 0.6])
    with pytest.raises(NotADistribution):
        make_explicit([-0.1, 1.2, -0.1 + 0.0])
    with pytest.raises(DegenerateLaw):
        make_explicit([0.0, 1.0])


def test_inversion_examples():
    law = make_stable_tail(1.5, 0.2)
    assert sample_offspring(law, 0.1) == 0
    assert sample_offspring(law, 1 - 0.2 * 100**-1.5) == 100
    assert sample_offspring(law, 0.5) == 1
    assert sample_offspring(make_explicit([0.5, 0, 0.5]), 0.7) == 2
    with pytest.raises(DomainError):
        sample_offspring(law, 1.0)


@given(st.floats(0.9296, 1 - 1e-12, exclude_max=True))
def test_inversion_matches_definition(u):
    # K >= n exactly when 1-u <= kappa*n^-a, for u in the heavy part
    law = make_stable_tail(1.5, 0.2)
    k = sample_offspring(law, u)
    v = 1.0 - u
    if u >= law.p0 + law.p1:
        assert k >= 2
        assert v <= 0.2 * k**-1.5 * (1 + 1e-12)
        assert v > 0.2 * (k + 1) ** -1.5 * (1 - 1e-12)


def test_stable_sampler_tail_frequencies():
    law = make_stable_tail(1.5, 0.2)
    n_draws = 10**7
    k = sample_many(law, Stream(2024, 0), n_draws)
    for n in (2, 5, 10, 100):
        p = 0.2 * n**-1.5
        freq = np.count_nonzero(k >= n) / n_draws
        se = math.sqrt(p * (1 - p) / n_draws)
        assert abs(freq - p) < 5 * se, (n, freq, p)
    assert abs(np.count_nonzero(k == 0) / n_draws - law.p0) < 5 * math.sqrt(law.p0 * (1 - law.p0) / n_draws)


def test_explicit_sampler_frequencies():
    p = [0.35, 0.4, 0.2, 0.0, 0.05]
    law = make_explicit(p)
    k = sample_many(law, Stream(9), 10**6)
    for j, pj in enumerate(p):
        se = math.sqrt(pj * (1 - pj) / 1e6)
        assert abs(np.mean(k == j) - pj) <= 5 * se + 1e-15


def test_f_binary_is_half_v():
    law = make_explicit([0.5, 0, 0.5])
    assert f_of_v(law, 1.0, 0.2) == pytest.approx(0.1, rel=1e-15)
    v = np.linspace(0, 1, 11)
    assert np.allclose(f_of_v(law, 1.0, v), v / 2, rtol=1e-14, atol=0)


def test_f_endpoints():
    for law in (make_stable_tail(1.5, 0.2), make_explicit([0.25, 0.5, 0.25])):
        assert f_of_v(law, 1.0, 0.0) == 0.0
        assert f_of_v(law, 1.0, 1.0) == pytest.approx(law.p0, rel=1e-15)
        with pytest.raises(DomainError):
            f_of_v(law, 1.0, 1.5)
        with pytest.raises(DomainError):
            f_of_v(law, 1.0, -1e-3)


@pytest.mark.parametrize("v", [1e-8, 1e-6, 1e-4, 1e-2, 0.3, 0.9, 1 - 1e-9])
@pytest.mark.parametrize("alpha,kappa", [(1.5, 0.2), (1.1, 0.05), (1.9, 0.6)])
def test_f_stable_against_polylog(alpha, kappa, v):
    law = make_stable_tail(alpha, kappa)
    assert f_of_v(law, 1.0, v) == pytest.approx(f_oracle(alpha, kappa, 1.0, v), rel=1e-10)


def test_f_explicit_against_generating_function():
    p = [0.35, 0.4, 0.2, 0.0, 0.05]
    law = make_explicit(p)
    for v in (1e-6, 1e-3, 0.1, 0.5):
        q = 1 - mp.mpf(v)
        exact = (sum(mp.mpf(str(pk)) * q**k for k, pk in enumerate(p)) - q) / v
        assert f_of_v(law, 1.0, v) == pytest.approx(float(exact), rel=1e-12)


@given(feasible(), st.floats(0.0, 1.0), st.floats(0.1, 10.0))
def test_f_nonnegative_monotone_and_linear_in_beta(ak, v, beta):
    law = make_stable_tail(*ak)
    f1 = f_of_v(law, 1.0, v)
    assert f1 >= 0
    assert f_of_v(law, beta, v) == pytest.approx(beta * f1, rel=1e-14, abs=1e-300)
    w = min(1.0, v + 1e-3)
    assert f_of_v(law, 1.0, w) >= f1


def test_f_continuity_on_fine_grid():
    law = make_stable_tail(1.5, 0.2)
    v = np.linspace(0, 1, 2001)
    f = f_of_v(law, 1.0, v)
    # increments bounded by the Hoelder modulus of v^(alpha-1)
    assert np.max(np.abs(np.diff(f))) < 2 * lemma2_constant(law, 1.0) * (v[1] ** 0.5)


def test_lemma2_constant_values():
    law = make_stable_tail(1.5, 0.2)
    assert lemma2_constant(law, 1.0) == pytest.approx(LEMMA2_ORACLE, rel=1e-14)
    assert lemma2_constant(law, 1.0) == pytest.approx(float(0.2 * mp.gamma(0.5) / 0.5), rel=1e-14)
    assert lemma2_constant(law, 2.0) == pytest.approx(1.417963, abs=5e-7)
    with pytest.raises(WrongKind):
        lemma2_constant(make_explicit([0.5, 0, 0.5]), 1.0)


@given(st.floats(0.05, 1.95))
def test_gamma_against_mpmath(x):
    assert math.gamma(x) == pytest.approx(float(mp.gamma(x)), rel=1e-12)


def test_lemma2_convergence():
    law = make_stable_tail(1.5, 0.2)
    c = lemma2_constant(law, 1.0)
    assert abs(f_of_v(law, 1.0, 1e-4) / 1e-2 - c) / c <= 0.02
    assert abs(f_of_v(law, 1.0, 1e-6) / 1e-3 - c) / c <= 0.005


def test_survival_map_and_derivative():
    p = [0.35, 0.4, 0.2, 0.0, 0.05]
    law = make_explicit(p)
    w = [0.0, 1e-9, 0.2, 0.7, 1.0]
    pm = [mp.mpf(str(x)) for x in p]
    direct = [float(1 - sum(pk * (1 - mp.mpf(x)) ** k for k, pk in enumerate(pm))) for x in w]
    deriv = [float(sum(k * pk * (1 - mp.mpf(x)) ** (k - 1) for k, pk in enumerate(pm) if k > 0)) for x in w]
    assert np.allclose(survival_map(law, np.array(w)), direct, rtol=1e-13, atol=0)
    assert np.allclose(survival_map_derivative(law, np.array(w)), deriv, rtol=1e-13, atol=0)
    with pytest.raises(WrongKind):
        survival_map(make_stable_tail(1.5, 0.2), w)
