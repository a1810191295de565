from __future__ import annotations

import math

import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cmjbranch.errors import A4Violated, AssumptionViolation, NoFiniteBranch, SubcriticalLaw
from cmjbranch.malthusian import derive_constants, extinction_probability, solve_malthusian
from cmjbranch.reproduction import (
    BernoulliSplit,
    DeterministicAges,
    Exponential,
    Fixed,
    FixedAge,
    IIDLitter,
    Poisson,
    PoissonAges,
    Uniform,
)


def _bernoulli_oracle():
    """Closed forms for BernoulliSplit(0.75, Exp(1)) by symbolic integration."""
    theta, x = sp.symbols("theta x", positive=True)
    m = sp.simplify(2 * sp.Rational(3, 4) * sp.integrate(sp.exp(-theta * x) * sp.exp(-x), (x, 0, sp.oo)))
    alpha = sp.solve(sp.Eq(m, 1), theta)[0]
    m_prime = sp.diff(m, theta).subs(theta, alpha)
    m2 = m.subs(theta, 2 * alpha)
    # xi(e^{-alpha .}) is 2 e^{-alpha X} with probability p, else 0
    E_sq = sp.Rational(3, 4) * 4 * sp.integrate(sp.exp(-2 * alpha * x) * sp.exp(-x), (x, 0, sp.oo))
    s2 = sp.simplify(E_sq - 1)
    q = sp.Rational(1, 3)
    return {
        "alpha": alpha,
        "m_prime_alpha": m_prime,
        "m_two_alpha": m2,
        "sigma2": s2,
        "sigma_W2": s2 / (1 - m2),
        "c_inf": s2 / (-alpha * m_prime),
        "extinction_q": q,
    }


def test_bernoulli_constants_match_symbolic_oracle():
    c = derive_constants(BernoulliSplit(0.75, Exponential(1.0)))
    for name, want in _bernoulli_oracle().items():
        assert abs(getattr(c, name) - float(want)) <= 1e-10, name
    assert c.lln_q_limit == pytest.approx(0.75, abs=1e-12)
    assert c.mean_N == 1.5
    assert c.a5_holds


def test_poisson_constants():
    c = derive_constants(PoissonAges(2.0))
    # m(theta) = 2 / theta, sigma^2 = m(2 alpha) for a Poisson process
    assert abs(c.alpha - 2.0) <= 1e-10
    assert abs(c.m_two_alpha - 0.5) <= 1e-10
    assert abs(c.sigma_W2 - 1.0) <= 1e-10
    assert abs(c.c_inf - 0.5) <= 1e-10
    assert c.extinction_q == 0.0


def test_deterministic_binary_alpha_is_log_two():
    law = DeterministicAges((1.0, 1.0))
    alpha = solve_malthusian(law)
    assert math.exp(-alpha) == 0.5
    assert law.laplace_m(alpha) == 1.0


def test_degenerate_law_needs_debug_flag():
    law = DeterministicAges((1.0, 1.0))
    with pytest.raises(A4Violated) as info:
        derive_constants(law)
    assert "(A4)" in str(info.value)
    c = derive_constants(law, allow_degenerate=True)
    assert c.sigma2 == 0.0 and c.sigma_W2 == 0.0 and c.c_inf == 0.0
    assert c.lattice


@pytest.mark.parametrize("law", [BernoulliSplit(0.4, Exponential(1.0)), BernoulliSplit(0.5), DeterministicAges(())])
def test_subcritical_laws_rejected(law):
    with pytest.raises(SubcriticalLaw) as info:
        solve_malthusian(law)
    assert isinstance(info.value, AssumptionViolation)
    assert "(A1)" in str(info.value)


def test_missing_branch_reported():
    class Flat(PoissonAges):
        # m never drops below one
        def laplace_m(self, theta):
            return math.inf

    with pytest.raises(NoFiniteBranch) as info:
        solve_malthusian(Flat(2.0))
    assert "(A2)" in str(info.value)


@pytest.mark.parametrize(
    "law, q",
    [
        (BernoulliSplit(0.75, Exponential(1.0)), 1 / 3),
        (BernoulliSplit(0.6, Exponential(1.0)), 2 / 3),
        (IIDLitter(Fixed(2), Exponential(1.0)), 0.0),
    ],
)
def test_extinction_probability(law, q):
    assert extinction_probability(law) == pytest.approx(q, abs=1e-10)


def test_extinction_poisson_litter_solves_fixed_point():
    law = IIDLitter(Poisson(2.0), Exponential(1.0))
    q = extinction_probability(law)
    assert 0 < q < 1
    assert abs(math.exp(2.0 * (q - 1.0)) - q) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(p=st.floats(0.55, 1.0), mean=st.floats(0.2, 5.0))
def test_alpha_residual_and_closed_form(p, mean):
    law = BernoulliSplit(p, Exponential(mean))
    alpha = solve_malthusian(law)
    assert abs(law.laplace_m(alpha) - 1.0) <= 1e-12
    # m(theta) = 2p / (1 + mean theta)
    assert alpha == pytest.approx((2 * p - 1) / mean, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(p1=st.floats(0.55, 0.99), dp=st.floats(0.001, 0.4))
def test_alpha_increases_with_p(p1, dp):
    p2 = min(1.0, p1 + dp)
    a1 = solve_malthusian(BernoulliSplit(p1, Uniform(0.5, 1.5)))
    a2 = solve_malthusian(BernoulliSplit(p2, Uniform(0.5, 1.5)))
    assert a2 > a1


def test_constants_serialization():
    c = derive_constants(BernoulliSplit(0.75, Exponential(1.0)))
    text = c.to_text()
    assert text.startswith(f"alpha={c.alpha!r}\n")
    assert "alpha.provenance=" in text
    assert c.csv_header().split(",") == list(c.NUMERIC)
    assert float(c.csv_row().split(",")[0]) == c.alpha
    assert c.growth_constant == pytest.approx(3.0)


def test_lattice_flag_carried():
    c = derive_constants(IIDLitter(Fixed(3), FixedAge(1.0)), allow_degenerate=True)
    assert c.lattice
    assert c.alpha == pytest.approx(math.log(3.0), abs=1e-12)
