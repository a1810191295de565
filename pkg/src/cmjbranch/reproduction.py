"""Offspring point-process laws.

A law describes the random point process of ages at which one individual
gives birth.  Four parametric families are supported; each exposes the
Laplace transform of its intensity measure in closed form, together with the
moments needed downstream, and a sampler shared with the jitted event loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numba
import numpy as np

from .errors import A3Violated, A4Violated, PreconditionError

INF = math.inf

# |sigma^2| below this is treated as a degenerate (deterministic) Z_1
SIGMA2_ZERO_TOL = 1e-12

# integer tags shared with the jitted kernels
KIND_POISSON, KIND_DETERMINISTIC, KIND_BERNOULLI, KIND_LITTER = 0, 1, 2, 3
AGE_EXP, AGE_FIXED, AGE_UNIFORM = 0, 1, 2
COUNT_POISSON, COUNT_GEOMETRIC, COUNT_FIXED = 0, 1, 2


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# age distributions


@dataclass(frozen=True)
class Exponential:
    mean: float

    def __post_init__(self):
        object.__setattr__(self, "mean", _positive("mean", self.mean))

    code = AGE_EXP
    sup = INF
    is_lattice = False

    def params(self) -> tuple[float, float]:
        return self.mean, 0.0

    def laplace(self, theta: float) -> float:
        return 1.0 / (1.0 + theta * self.mean)

    def laplace_t(self, theta: float) -> float:
        """E[X exp(-theta X)]."""
        return self.mean / (1.0 + theta * self.mean) ** 2

    def tail(self, theta: float, a: float) -> float:
        """E[exp(-theta X); X > a]."""
        a = max(a, 0.0)
        return math.exp(-(theta + 1.0 / self.mean) * a) / (1.0 + theta * self.mean)

    def tilted(self, alpha: float, rng: np.random.Generator, size: int) -> np.ndarray:
        # exp(-alpha x) * exp(-x/mean) is again exponential
        return rng.exponential(1.0 / (alpha + 1.0 / self.mean), size)


@dataclass(frozen=True)
class FixedAge:
    a: float

    def __post_init__(self):
        object.__setattr__(self, "a", _positive("a", self.a))

    code = AGE_FIXED
    is_lattice = True

    @property
    def sup(self) -> float:
        return self.a

    def params(self) -> tuple[float, float]:
        return self.a, 0.0

    def laplace(self, theta: float) -> float:
        return math.exp(-theta * self.a)

    def laplace_t(self, theta: float) -> float:
        return self.a * math.exp(-theta * self.a)

    def tail(self, theta: float, a: float) -> float:
        return math.exp(-theta * self.a) if self.a > a else 0.0

    def tilted(self, alpha: float, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.a)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (0.0 <= lo < hi < INF):
            raise ValueError(f"need 0 <= lo < hi < inf, got lo={lo!r}, hi={hi!r}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    code = AGE_UNIFORM
    is_lattice = False

    @property
    def sup(self) -> float:
        return self.hi

    def params(self) -> tuple[float, float]:
        return self.lo, self.hi

    def _integral(self, theta: float, a: float, b: float) -> float:
        # int_a^b exp(-theta x) dx / (hi - lo)
        if b <= a:
            return 0.0
        w = self.hi - self.lo
        if theta == 0.0:
            return (b - a) / w
        return math.exp(-theta * a) * -math.expm1(-theta * (b - a)) / (theta * w)

    def laplace(self, theta: float) -> float:
        return self._integral(theta, self.lo, self.hi)

    def laplace_t(self, theta: float) -> float:
        lo, hi = self.lo, self.hi
        if theta == 0.0:
            return 0.5 * (lo + hi)

        def anti(x):
            return -math.exp(-theta * x) * (x / theta + 1.0 / theta**2)

        return (anti(hi) - anti(lo)) / (hi - lo)

    def tail(self, theta: float, a: float) -> float:
        return self._integral(theta, max(a, self.lo), self.hi)

    def tilted(self, alpha: float, rng: np.random.Generator, size: int) -> np.ndarray:
        # inverse CDF of the density proportional to exp(-alpha x) on [lo, hi]
        u = rng.random(size)
        return self.lo - np.log1p(u * math.expm1(-alpha * (self.hi - self.lo))) / alpha


AgeDist = Exponential | FixedAge | Uniform


# ---------------------------------------------------------------------------
# offspring-count distributions (IIDLitter)


@dataclass(frozen=True)
class Poisson:
    mean: float

    def __post_init__(self):
        object.__setattr__(self, "mean", _positive("mean", self.mean))

    code = COUNT_POISSON

    @property
    def factorial2(self) -> float:
        return self.mean**2

    def pgf(self, s: float) -> float:
        return math.exp(self.mean * (s - 1.0))


@dataclass(frozen=True)
class Geometric:
    """Geometric count on {0, 1, 2, ...} with the given mean."""

    mean: float

    def __post_init__(self):
        object.__setattr__(self, "mean", _positive("mean", self.mean))

    code = COUNT_GEOMETRIC

    @property
    def factorial2(self) -> float:
        return 2.0 * self.mean**2

    def pgf(self, s: float) -> float:
        r = self.mean / (1.0 + self.mean)
        return (1.0 - r) / (1.0 - r * s)


@dataclass(frozen=True)
class Fixed:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"n must be a nonnegative integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    code = COUNT_FIXED

    @property
    def mean(self) -> float:
        return float(self.n)

    @property
    def factorial2(self) -> float:
        return float(self.n * (self.n - 1))

    def pgf(self, s: float) -> float:
        return s**self.n


CountDist = Poisson | Geometric | Fixed


# ---------------------------------------------------------------------------
# laws


@dataclass(frozen=True)
class OffspringSample:
    ages: np.ndarray
    truncated: bool

    def __eq__(self, other):
        if not isinstance(other, OffspringSample):
            return NotImplemented
        return self.truncated == other.truncated and np.array_equal(self.ages, other.ages)

    def __len__(self):
        return len(self.ages)


class ReproductionLaw:
    """Base class; concrete laws are frozen dataclasses below."""

    kind: int
    variant: str

    def mean_offspring(self) -> float:
        raise NotImplementedError

    def laplace_m(self, theta: float) -> float:
        raise NotImplementedError

    def _laplace_t(self, theta: float) -> float:
        raise NotImplementedError

    def second_moment(self, alpha: float) -> float:
        """E[Z_1^2] where Z_1 = sum_k exp(-alpha X_k)."""
        raise NotImplementedError

    def tail_mass(self, alpha: float, age_cap: float) -> float:
        """int_{(age_cap, inf)} exp(-alpha x) mu(dx)."""
        raise NotImplementedError

    def tilted_increments(self, alpha: float, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def pgf(self, s: float) -> float:
        raise NotImplementedError

    @property
    def max_age(self) -> float:
        raise NotImplementedError

    @property
    def is_lattice(self) -> bool:
        raise NotImplementedError

    def _encode(self) -> tuple[int, np.ndarray, np.ndarray]:
        raise NotImplementedError

    # shared helpers

    def laplace_m_prime(self, theta: float) -> float:
        if not theta > 0:
            raise PreconditionError("laplace_m_prime needs theta > 0")
        value = -self._laplace_t(theta)
        if not math.isfinite(value):
            raise A3Violated(f"m'({theta}) diverges")
        return value

    def sigma2(self, alpha: float, check: bool = True) -> float:
        """E[(Z_1 - 1)^2] in closed form.

        With ``check`` set, a value that is zero (below ``SIGMA2_ZERO_TOL``) or
        infinite raises ``A4Violated``; the offending value rides on the
        exception.
        """
        value = self.second_moment(alpha) - 2.0 * self.laplace_m(alpha) + 1.0
        if abs(value) < SIGMA2_ZERO_TOL:
            value = 0.0
        if check and (value == 0.0 or not math.isfinite(value)):
            raise A4Violated(f"sigma^2 = {value!r}", value=value)
        return value

    def a5_certificate(self, alpha: float) -> tuple[bool, str]:
        """Analytic check of the integrability condition used for a.s. results.

        With g(t) = exp(-alpha t / 2), the supremum over t of
        sum_k exp(-alpha X_k) 1{X_k > t} / g(t) is bounded by
        sum_k exp(-alpha X_k / 2), whose mean is m(alpha / 2).
        """
        half = self.laplace_m(alpha / 2.0)
        ok = math.isfinite(half)
        return ok, (
            f"g(t)=exp(-alpha*t/2); bound E[sum_k exp(-alpha*X_k/2)] = m(alpha/2) = {half!r}"
            + ("" if ok else " diverges; no certificate")
        )


@dataclass(frozen=True)
class PoissonAges(ReproductionLaw):
    """Homogeneous Poisson process of birth ages with the given rate."""

    rate: float
    kind = KIND_POISSON
    variant = "poisson_ages"

    def __post_init__(self):
        object.__setattr__(self, "rate", _positive("rate", self.rate))

    def mean_offspring(self) -> float:
        return INF

    def laplace_m(self, theta: float) -> float:
        return self.rate / theta if theta > 0 else INF

    def _laplace_t(self, theta: float) -> float:
        return self.rate / theta**2 if theta > 0 else INF

    def second_moment(self, alpha: float) -> float:
        if not alpha > 0:
            return INF
        # variance of a Poisson integral plus the squared mean
        return self.rate / (2.0 * alpha) + (self.rate / alpha) ** 2

    def tail_mass(self, alpha: float, age_cap: float) -> float:
        return self.rate / alpha * math.exp(-alpha * age_cap)

    def tilted_increments(self, alpha, rng, size):
        return rng.exponential(1.0 / alpha, size)

    def pgf(self, s: float) -> float:
        # N is infinite almost surely
        return 0.0 if s < 1.0 else 1.0

    max_age = INF
    is_lattice = False

    def _encode(self):
        return self.kind, np.array([self.rate, 0, 0, 0, 0], dtype=np.float64), _NO_ATOMS


@dataclass(frozen=True)
class DeterministicAges(ReproductionLaw):
    """Fixed counting measure; a repeated age carries its multiplicity."""

    ages: tuple[float, ...]
    kind = KIND_DETERMINISTIC
    variant = "deterministic_ages"

    def __post_init__(self):
        ages = tuple(sorted(_positive("age", a) for a in self.ages))
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "_atoms", np.array(ages, dtype=np.float64))

    def mean_offspring(self) -> float:
        return float(len(self.ages))

    def laplace_m(self, theta: float) -> float:
        return math.fsum(math.exp(-theta * a) for a in self.ages)

    def _laplace_t(self, theta: float) -> float:
        return math.fsum(a * math.exp(-theta * a) for a in self.ages)

    def second_moment(self, alpha: float) -> float:
        return self.laplace_m(alpha) ** 2

    def tail_mass(self, alpha: float, age_cap: float) -> float:
        return math.fsum(math.exp(-alpha * a) for a in self.ages if a > age_cap)

    def tilted_increments(self, alpha, rng, size):
        w = np.exp(-alpha * self._atoms)
        return rng.choice(self._atoms, size=size, p=w / w.sum())

    def pgf(self, s: float) -> float:
        return s ** len(self.ages)

    @property
    def max_age(self) -> float:
        return self.ages[-1] if self.ages else 0.0

    @property
    def is_lattice(self) -> bool:
        if not self.ages:
            return True
        base = self.ages[0]
        for a in self.ages:
            r = a / base
            frac = Fraction(r).limit_denominator(10_000)
            if abs(r - float(frac)) > 1e-9 * r:
                return False
        return True

    def _encode(self):
        return self.kind, np.zeros(5, dtype=np.float64), self._atoms


@dataclass(frozen=True)
class BernoulliSplit(ReproductionLaw):
    """With probability p, two children at one random age L; otherwise none."""

    p: float
    lifetime: AgeDist = field(default_factory=lambda: Exponential(1.0))
    kind = KIND_BERNOULLI
    variant = "bernoulli_split"

    def __post_init__(self):
        p = float(self.p)
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {p!r}")
        object.__setattr__(self, "p", p)

    def mean_offspring(self) -> float:
        return 2.0 * self.p

    def laplace_m(self, theta: float) -> float:
        return 2.0 * self.p * self.lifetime.laplace(theta)

    def _laplace_t(self, theta: float) -> float:
        return 2.0 * self.p * self.lifetime.laplace_t(theta)

    def second_moment(self, alpha: float) -> float:
        return 4.0 * self.p * self.lifetime.laplace(2.0 * alpha)

    def tail_mass(self, alpha: float, age_cap: float) -> float:
        return 2.0 * self.p * self.lifetime.tail(alpha, age_cap)

    def tilted_increments(self, alpha, rng, size):
        return self.lifetime.tilted(alpha, rng, size)

    def pgf(self, s: float) -> float:
        return 1.0 - self.p + self.p * s * s

    @property
    def max_age(self) -> float:
        return self.lifetime.sup

    @property
    def is_lattice(self) -> bool:
        return self.lifetime.is_lattice

    def _encode(self):
        a, b = self.lifetime.params()
        params = np.array([self.p, self.lifetime.code, a, b, 0], dtype=np.float64)
        return self.kind, params, _NO_ATOMS


@dataclass(frozen=True)
class IIDLitter(ReproductionLaw):
    """A random number of children, each at an independent age."""

    count: CountDist
    age: AgeDist
    kind = KIND_LITTER
    variant = "iid_litter"

    def mean_offspring(self) -> float:
        return self.count.mean

    def laplace_m(self, theta: float) -> float:
        return self.count.mean * self.age.laplace(theta)

    def _laplace_t(self, theta: float) -> float:
        return self.count.mean * self.age.laplace_t(theta)

    def second_moment(self, alpha: float) -> float:
        phi = self.age.laplace(alpha)
        return self.count.factorial2 * phi * phi + self.count.mean * self.age.laplace(2.0 * alpha)

    def tail_mass(self, alpha: float, age_cap: float) -> float:
        return self.count.mean * self.age.tail(alpha, age_cap)

    def tilted_increments(self, alpha, rng, size):
        return self.age.tilted(alpha, rng, size)

    def pgf(self, s: float) -> float:
        return self.count.pgf(s)

    @property
    def max_age(self) -> float:
        return self.age.sup

    @property
    def is_lattice(self) -> bool:
        return self.age.is_lattice

    def _encode(self):
        cparam = self.count.n if isinstance(self.count, Fixed) else self.count.mean
        a, b = self.age.params()
        params = np.array([self.count.code, cparam, self.age.code, a, b], dtype=np.float64)
        return self.kind, params, _NO_ATOMS


_NO_ATOMS = np.zeros(0, dtype=np.float64)


# ---------------------------------------------------------------------------
# jitted sampler (shared with the engine)


@numba.njit(inline="always")
def _draw_age(code, a, b, rng):
    if code == AGE_EXP:
        return a * rng.standard_exponential()
    if code == AGE_FIXED:
        return a
    # (0, 1] keeps the age strictly above lo
    return a + (b - a) * (1.0 - rng.random())


@numba.njit(inline="always")
def _fill_offspring(kind, params, atoms, cap, rng, buf):
    """Write one draw's sorted ages <= cap into ``buf`` and return their number.

    Never reallocates. A return value above ``buf.size`` means the buffer was
    too small: the stream has been consumed as for a complete draw but only the
    first ``buf.size`` ages were stored (unsorted), so the caller must rewind
    and retry with a larger buffer.
    """
    size = buf.size
    n = 0
    if kind == KIND_POISSON:
        rate = params[0]
        x = 0.0
        while True:
            x += rng.standard_exponential() / rate
            if x > cap:
                break
            if n < size:
                buf[n] = x
            n += 1
    elif kind == KIND_DETERMINISTIC:
        for i in range(atoms.size):
            if atoms[i] <= cap:
                if n < size:
                    buf[n] = atoms[i]
                n += 1
    elif kind == KIND_BERNOULLI:
        if rng.random() < params[0]:
            x = _draw_age(int(params[1]), params[2], params[3], rng)
            if x <= cap:
                if size >= 2:
                    buf[0] = x
                    buf[1] = x
                n = 2
    else:
        ccode = int(params[0])
        if ccode == COUNT_POISSON:
            k = rng.poisson(params[1])
        elif ccode == COUNT_GEOMETRIC:
            k = rng.geometric(1.0 / (1.0 + params[1])) - 1
        else:
            k = int(params[1])
        acode = int(params[2])
        for _ in range(k):
            x = _draw_age(acode, params[3], params[4], rng)
            if x <= cap:
                if n < size:
                    buf[n] = x
                n += 1
        if n <= size:
            # insertion sort; litters are small
            for i in range(1, n):
                v = buf[i]
                j = i - 1
                while j >= 0 and buf[j] > v:
                    buf[j + 1] = buf[j]
                    j -= 1
                buf[j + 1] = v
    return n


@numba.njit(cache=True)
def _draw_one(kind, params, atoms, cap, rng, buf):
    return _fill_offspring(kind, params, atoms, cap, rng, buf)


@numba.njit(cache=True)
def _draw_batch(kind, params, atoms, cap, rng, count, buf, flat):
    """Fill ``flat`` with ``count`` draws; return (offsets, pos, ok).

    ``ok`` is False when ``buf`` or ``flat`` ran out of room.
    """
    offsets = np.zeros(count + 1, dtype=np.int64)
    pos = 0
    for i in range(count):
        n = _fill_offspring(kind, params, atoms, cap, rng, buf)
        if n > buf.size or pos + n > flat.size:
            return offsets, pos, False
        flat[pos : pos + n] = buf[:n]
        pos += n
        offsets[i + 1] = pos
    return offsets, pos, True


def _check_cap(law: ReproductionLaw, age_cap: float) -> float:
    age_cap = float(age_cap)
    if not age_cap > 0:
        raise PreconditionError("age_cap must be positive")
    if isinstance(law, PoissonAges) and not math.isfinite(age_cap):
        raise PreconditionError("PoissonAges has infinitely many points; a finite age_cap is required")
    return age_cap


def sample_offspring(law: ReproductionLaw, age_cap: float, rng: np.random.Generator) -> OffspringSample:
    """Draw one realization of the offspring point process, truncated at ``age_cap``."""
    age_cap = _check_cap(law, age_cap)
    kind, params, atoms = law._encode()
    size = 16
    while True:
        state = rng.bit_generator.state
        buf = np.empty(size, dtype=np.float64)
        n = _draw_one(kind, params, atoms, age_cap, rng, buf)
        if n <= size:
            return OffspringSample(ages=buf[:n].copy(), truncated=law.max_age > age_cap)
        rng.bit_generator.state = state
        size = 2 * n


def sample_offspring_batch(
    law: ReproductionLaw, age_cap: float, rng: np.random.Generator, count: int
) -> tuple[np.ndarray, np.ndarray]:
    """``count`` independent draws, flattened.

    Returns ``(ages, offsets)``; draw ``i`` occupies ``ages[offsets[i]:offsets[i+1]]``.
    Consumes the stream exactly like ``count`` calls of :func:`sample_offspring`.
    """
    age_cap = _check_cap(law, age_cap)
    kind, params, atoms = law._encode()
    count = int(count)
    size, room = 16, max(4 * count, 16)
    while True:
        state = rng.bit_generator.state
        buf = np.empty(size, dtype=np.float64)
        flat = np.empty(room, dtype=np.float64)
        offsets, pos, ok = _draw_batch(kind, params, atoms, age_cap, rng, count, buf, flat)
        if ok:
            return flat[:pos].copy(), offsets
        rng.bit_generator.state = state
        size, room = 4 * size, 4 * room


def laplace_m(law: ReproductionLaw, theta: float) -> float:
    """m(theta) = int exp(-theta t) mu(dt); ``inf`` when the integral diverges."""
    if theta < 0:
        raise PreconditionError("theta must be nonnegative")
    return law.laplace_m(float(theta))


def laplace_m_prime(law: ReproductionLaw, theta: float) -> float:
    return law.laplace_m_prime(float(theta))


def sigma2(law: ReproductionLaw, alpha: float, check: bool = True) -> float:
    return law.sigma2(float(alpha), check=check)


def mean_offspring(law: ReproductionLaw) -> float:
    return law.mean_offspring()


def sigma2_monte_carlo(
    law: ReproductionLaw, alpha: float, n: int, rng: np.random.Generator, age_cap: float
) -> tuple[float, float]:
    """Monte-Carlo estimate of sigma^2 with its standard error."""
    ages, offsets = sample_offspring_batch(law, age_cap, rng, n)
    y = (per_draw_sum(np.exp(-alpha * ages), offsets) - 1.0) ** 2
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(n))


def per_draw_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Sum ``values`` within each draw of a flattened batch."""
    owner = np.repeat(np.arange(offsets.size - 1), np.diff(offsets))
    return np.bincount(owner, weights=values, minlength=offsets.size - 1)
