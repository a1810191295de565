"""Malthusian parameter and the derived model constants."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .errors import A4Violated, NoFiniteBranch, SubcriticalLaw
from .reproduction import ReproductionLaw

DEFAULT_TOL = 1e-12
PROBE_LIMIT = 64


def solve_malthusian(law: ReproductionLaw, tol: float = DEFAULT_TOL) -> float:
    """Root alpha > 0 of m(alpha) = 1.

    The bracket is found by doubling an upper end from 1 until m < 1 and
    halving a lower end from 1 until m > 1 (an infinite m counts as > 1).
    Bisection then runs down to floating-point resolution, returning early on
    an exact hit; ``tol`` bounds the accepted residual |m(alpha) - 1|.
    """
    if not law.mean_offspring() > 1.0:
        raise SubcriticalLaw(f"E[N] = {law.mean_offspring()!r} <= 1")
    m = law.laplace_m

    hi = 1.0
    for _ in range(PROBE_LIMIT):
        if m(hi) < 1.0:
            break
        hi *= 2.0
    else:
        raise NoFiniteBranch(f"m(theta) >= 1 for all probed theta up to {hi:g}")

    lo = 1.0
    for _ in range(PROBE_LIMIT):
        if m(lo) > 1.0:
            break
        lo *= 0.5
    else:
        raise NoFiniteBranch(f"m(theta) <= 1 for all probed theta down to {lo:g}")
    lo = min(lo, hi)

    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        value = m(mid)
        if value == 1.0:
            return mid
        if value > 1.0:
            lo = mid
        else:
            hi = mid
    # adjacent floats: keep whichever end has the smaller residual
    alpha = lo if abs(m(lo) - 1.0) <= abs(m(hi) - 1.0) else hi
    if not abs(m(alpha) - 1.0) <= tol:
        raise NoFiniteBranch(f"residual |m(alpha) - 1| = {abs(m(alpha) - 1.0):g} exceeds tol")
    return alpha


def extinction_probability(law: ReproductionLaw, tol: float = DEFAULT_TOL, max_iter: int = 10_000_000) -> float:
    """Smallest fixed point of the offspring-count generating function.

    Fixed-point iteration from 0; ages play no role.
    """
    if not law.mean_offspring() > 1.0:
        raise SubcriticalLaw(f"E[N] = {law.mean_offspring()!r} <= 1")
    if math.isinf(law.mean_offspring()):
        return 0.0
    q = 0.0
    for _ in range(max_iter):
        nxt = law.pgf(q)
        if abs(nxt - q) <= tol:
            return nxt
        q = nxt
    return q


@dataclass(frozen=True)
class ModelConstants:
    alpha: float
    m_prime_alpha: float
    m_two_alpha: float
    sigma2: float
    sigma_W2: float
    c_inf: float
    mean_N: float
    extinction_q: float
    a5_holds: bool = True
    a5_justification: str = ""
    lattice: bool = False
    provenance: dict = field(default_factory=dict, compare=False)

    NUMERIC = ("alpha", "m_prime_alpha", "m_two_alpha", "sigma2", "sigma_W2", "c_inf", "mean_N", "extinction_q")

    @property
    def sigma_W(self) -> float:
        return math.sqrt(self.sigma_W2)

    @property
    def lln_q_limit(self) -> float:
        """(1 - m(2 alpha)) / (-alpha m'(alpha))."""
        return (1.0 - self.m_two_alpha) / (-self.alpha * self.m_prime_alpha)

    @property
    def growth_constant(self) -> float:
        """1 / (-alpha m'(alpha)), the limit of exp(-alpha t) N_t / W."""
        return 1.0 / (-self.alpha * self.m_prime_alpha)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [f"{k}={self._fmt(getattr(self, k))}" for k in self.NUMERIC]
        lines += [f"{k}.provenance={self.provenance.get(k, '')}" for k in self.NUMERIC]
        lines += [
            f"a5_holds={int(self.a5_holds)}",
            f"a5_justification={self.a5_justification}",
            f"lattice={int(self.lattice)}",
        ]
        return "\n".join(lines) + "\n"

    def csv_header(self) -> str:
        return ",".join(self.NUMERIC)

    def csv_row(self) -> str:
        return ",".join(self._fmt(getattr(self, k)) for k in self.NUMERIC)

    @staticmethod
    def _fmt(x) -> str:
        return repr(float(x))


def derive_constants(law: ReproductionLaw, tol: float = DEFAULT_TOL, allow_degenerate: bool = False) -> ModelConstants:
    """Every constant the limit theorems refer to, with a provenance tag each.

    ``allow_degenerate`` accepts sigma^2 = 0 (debug runs on deterministic laws);
    sigma_W^2 and c_inf are then 0 as well.
    """
    alpha = solve_malthusian(law, tol)
    m_prime = law.laplace_m_prime(alpha)
    m2 = law.laplace_m(2.0 * alpha)
    if not m2 < 1.0:
        raise A4Violated(f"m(2 alpha) = {m2!r} is not below 1", value=m2)
    s2 = law.sigma2(alpha, check=not allow_degenerate)
    a5, why = law.a5_certificate(alpha)
    closed = "closed-form"
    return ModelConstants(
        alpha=alpha,
        m_prime_alpha=m_prime,
        m_two_alpha=m2,
        sigma2=s2,
        sigma_W2=s2 / (1.0 - m2),
        c_inf=s2 / (-alpha * m_prime),
        mean_N=law.mean_offspring(),
        extinction_q=extinction_probability(law, tol),
        a5_holds=a5,
        a5_justification=why,
        lattice=law.is_lattice,
        provenance={
            "alpha": "bisection on closed-form m",
            "m_prime_alpha": closed,
            "m_two_alpha": closed,
            "sigma2": closed,
            "sigma_W2": closed,
            "c_inf": closed,
            "mean_N": closed,
            "extinction_q": "fixed-point iteration on closed-form pgf",
        },
    )
