"""Estimates built from ensembles and the statistical verification suites.

Every suite returns a :class:`VerificationReport`; a report passes iff each of
its checks does. Replicas are put in replica-index order before any
reduction, so reports do not depend on how an ensemble was assembled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .engine import Ensemble, auto_age_cap
from .errors import (
    CurveTooShort,
    GridBeyondHorizon,
    PreconditionError,
    TooFewReplicas,
    TooFewRetained,
    TooFewSamples,
    WindowBeyondHorizon,
)
from .malthusian import ModelConstants
from .reproduction import ReproductionLaw, sample_offspring_batch

W_MIN = 0.05
KS_COEF = 1.63
MIN_RETAINED = 2000
MIN_CURVE_REPLICAS = 100
BOOTSTRAP_RESAMPLES = 1000
EXTRAPOLATION_LIMIT = 0.2
C_DELTA_PROVENANCE = "Monte-Carlo over offspring draws, trapezoid quadrature on the estimated variance curve"


# ---------------------------------------------------------------------------
# variance curve


@dataclass(frozen=True)
class VarianceCurve:
    """v_t = E[(W_t - 1)^2] on a grid, with standard errors.

    Evaluation interpolates linearly, returns 0 at negative arguments and
    ``tail`` (the limit sigma_W^2) beyond the last grid time.
    """

    t: np.ndarray
    v: np.ndarray
    se: np.ndarray
    n: int
    tail: float

    def __call__(self, x) -> np.ndarray:
        return self._eval(x, self.v, self.tail)

    def se_at(self, x) -> np.ndarray:
        return self._eval(x, self.se, float(self.se[-1]))

    def _eval(self, x, values, tail):
        x = np.asarray(x, dtype=np.float64)
        out = np.interp(x, self.t, values, left=0.0, right=tail)
        return np.where(x < 0.0, 0.0, out)

    def monotone_violations(self, k: float = 2.0) -> list[tuple[int, int]]:
        """Pairs i < j with v_i - v_j above k times the larger standard error."""
        bad = []
        for j in range(1, self.v.size):
            drop = self.v[:j] - self.v[j]
            tol = k * np.maximum(self.se[:j], self.se[j])
            bad += [(int(i), j) for i in np.flatnonzero(drop > tol)]
        return bad


def estimate_variance_curve(ensemble: Ensemble, constants: ModelConstants, grid=None) -> VarianceCurve:
    """Variance curve from the valid replicas, centered at the exact mean 1."""
    ens = _canonical(ensemble)
    W = ens.W[ens.valid]
    n = W.shape[0]
    if n < MIN_CURVE_REPLICAS:
        raise TooFewReplicas(f"{n} valid replicas; at least {MIN_CURVE_REPLICAS} needed")
    if grid is None:
        cols = np.arange(ens.grid.size)
    else:
        cols = np.array([ens.column(t) for t in grid], dtype=np.int64)
    sq = (W[:, cols] - 1.0) ** 2
    return VarianceCurve(
        t=ens.grid[cols].copy(),
        v=sq.mean(axis=0),
        se=sq.std(axis=0, ddof=1) / math.sqrt(n),
        n=n,
        tail=constants.sigma_W2,
    )


# ---------------------------------------------------------------------------
# c_delta


class _Primitive:
    """F(a) = int_0^a exp(alpha u) v(u) du by the trapezoid rule.

    Nodes are the curve knots refined ``refine`` times, extended past the last
    knot at the same spacing up to ``upper``; evaluation between nodes adds a
    partial trapezoid panel.
    """

    def __init__(self, alpha, curve: VarianceCurve, upper: float, refine: int, values=None, tail=None):
        values = curve.v if values is None else values
        tail = curve.tail if tail is None else tail
        knots = curve.t[curve.t <= upper]
        if knots.size == 0 or knots[0] > 0.0:
            knots = np.concatenate([[0.0], knots])
        pieces = [np.linspace(a, b, refine + 1)[:-1] for a, b in zip(knots[:-1], knots[1:])]
        nodes = np.concatenate(pieces + [knots[-1:]]) if pieces else knots.copy()
        if nodes[-1] < upper:
            step = (knots[-1] - knots[0]) / max(knots.size - 1, 1) / refine if knots.size > 1 else upper / 64
            extra = np.arange(1, math.ceil((upper - nodes[-1]) / step) + 1) * step + nodes[-1]
            extra[-1] = upper
            nodes = np.concatenate([nodes, extra])
        self.alpha = alpha
        self.nodes = nodes
        self.fn = lambda x: np.exp(alpha * x) * curve._eval(x, values, tail)
        g = self.fn(nodes)
        self.g = g
        self.cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(nodes) * (g[1:] + g[:-1]))])

    def __call__(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        k = np.clip(np.searchsorted(self.nodes, a, side="right") - 1, 0, self.nodes.size - 1)
        base = self.nodes[k]
        return self.cum[k] + 0.5 * (a - base) * (self.g[k] + self.fn(a))


def delta_kernel(primitive: _Primitive, alpha: float, delta: float, ages: np.ndarray) -> np.ndarray:
    """exp(-2 alpha X) int_0^X exp(alpha x) v(delta + x - X) dx for each age X."""
    lower = np.maximum(delta - ages, 0.0)
    return np.exp(-alpha * (ages + delta)) * (primitive(delta) - primitive(lower))


@dataclass(frozen=True)
class CDeltaEstimate:
    delta: float
    value: float
    err_mc: float
    err_quad: float
    err_curve: float
    extrapolated_fraction: float

    @property
    def error(self) -> float:
        return self.err_mc + self.err_quad + self.err_curve


@dataclass(frozen=True)
class CDeltaTable:
    entries: tuple[CDeltaEstimate, ...]
    provenance: str = C_DELTA_PROVENANCE

    @property
    def deltas(self) -> np.ndarray:
        return np.array([e.delta for e in self.entries])

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    @property
    def errors(self) -> np.ndarray:
        return np.array([e.error for e in self.entries])

    def at(self, delta: float) -> CDeltaEstimate:
        for e in self.entries:
            if math.isclose(e.delta, delta, rel_tol=1e-12, abs_tol=1e-12):
                return e
        raise PreconditionError(f"c_delta table has no entry for delta={delta!r}")

    def monotone_violations(self) -> list[tuple[float, float]]:
        """Consecutive pairs whose decrease exceeds their combined error bars."""
        out = []
        order = np.argsort(self.deltas)
        for i, j in zip(order[:-1], order[1:]):
            a, b = self.entries[i], self.entries[j]
            if a.value - b.value > a.error + b.error:
                out.append((a.delta, b.delta))
        return out

    def scaled(self, factor: float) -> "CDeltaTable":
        """The same table with every value multiplied (for mis-scaling controls)."""
        return CDeltaTable(
            tuple(
                CDeltaEstimate(e.delta, factor * e.value, factor * e.err_mc, factor * e.err_quad,
                               factor * e.err_curve, e.extrapolated_fraction)
                for e in self.entries
            ),
            provenance=f"{self.provenance} (scaled by {factor!r})",
        )

    def to_csv(self) -> str:
        rows = ["delta,c_delta,error,err_mc,err_quad,err_curve,extrapolated_fraction"]
        rows += [
            f"{e.delta!r},{e.value!r},{e.error!r},{e.err_mc!r},{e.err_quad!r},{e.err_curve!r},{e.extrapolated_fraction!r}"
            for e in self.entries
        ]
        return "\n".join(rows) + "\n"


def compute_c_delta_table(
    law: ReproductionLaw,
    constants: ModelConstants,
    curve: VarianceCurve,
    deltas,
    n_mc: int,
    rng: np.random.Generator,
    refine: int = 8,
    age_cap: float | None = None,
) -> CDeltaTable:
    """c_delta for each delta, all from one batch of offspring draws.

    Error = Monte-Carlo SE + Richardson bound of the trapezoid rule (step
    halving) + the curve's standard error pushed through the same linear map.
    """
    deltas = [float(d) for d in deltas]
    if any(not d > 0 for d in deltas):
        raise PreconditionError("delta must be positive")
    if n_mc < 2:
        raise TooFewSamples("n_mc must be at least 2")
    alpha = constants.alpha
    scale = 1.0 / -constants.m_prime_alpha
    if age_cap is None:
        age_cap = auto_age_cap(law, alpha)
    ages, offsets = sample_offspring_batch(law, age_cap, rng, n_mc)
    owner = np.repeat(np.arange(n_mc), np.diff(offsets))
    upper = max(deltas)
    fine = _Primitive(alpha, curve, upper, refine)
    coarse = _Primitive(alpha, curve, upper, max(refine // 2, 1))
    se_prim = _Primitive(alpha, curve, upper, refine, values=curve.se, tail=float(curve.se[-1]))
    zero_tail = _Primitive(alpha, curve, upper, refine, tail=0.0)
    t_end = float(curve.t[-1])

    def per_draw(prim, delta):
        return np.bincount(owner, weights=delta_kernel(prim, alpha, delta, ages), minlength=n_mc) * scale

    entries = []
    for d in deltas:
        y = per_draw(fine, d)
        value = float(y.mean())
        err_mc = float(y.std(ddof=1) / math.sqrt(n_mc))
        err_quad = abs(value - float(per_draw(coarse, d).mean())) / 3.0
        err_curve = float(per_draw(se_prim, d).mean())
        inside = float(per_draw(zero_tail, d).mean()) if d > t_end else value
        frac = 0.0 if value == 0.0 else max(0.0, 1.0 - inside / value)
        if frac > EXTRAPOLATION_LIMIT:
            raise CurveTooShort(
                f"delta={d!r}: {frac:.1%} of the integral comes from beyond the curve's end t={t_end!r}"
            )
        entries.append(CDeltaEstimate(d, value, err_mc, err_quad, err_curve, frac))
    return CDeltaTable(tuple(entries))


def compute_c_delta(law, constants, curve, delta, n_mc, rng, **kwargs) -> CDeltaEstimate:
    return compute_c_delta_table(law, constants, curve, [delta], n_mc, rng, **kwargs).entries[0]


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov


def ks_distance(samples, reference: str = "normal") -> float:
    """Sup distance between the empirical CDF of ``samples`` and the reference.

    The standard normal CDF is ``scipy.special.ndtr``, accurate to a few ulps.
    """
    if reference != "normal":
        raise ValueError(f"unknown reference CDF {reference!r}")
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n < 2:
        raise TooFewSamples(f"{n} samples; at least 2 needed")
    cdf = ndtr(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    relation: str = "<="

    @property
    def passed(self) -> bool:
        if self.relation == "<=":
            return bool(self.value <= self.threshold)
        if self.relation == ">=":
            return bool(self.value >= self.threshold)
        raise ValueError(self.relation)


@dataclass
class VerificationReport:
    suite: str
    checks: list[Check]
    exclusions: dict[str, int]
    constants: dict[str, tuple[float, str]]
    parameters: dict = field(default_factory=dict)
    statistics: dict[str, float] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)
    weak: bool = False
    residuals: np.ndarray | None = None
    matrices: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"suite={self.suite}", f"passed={int(self.passed)}", f"strength={'WEAK' if self.weak else 'STANDARD'}"]
        lines += [f"param.{k}={_fmt(v)}" for k, v in self.parameters.items()]
        for c in self.checks:
            lines.append(f"check.{c.name}={_fmt(c.value)} {c.relation} {_fmt(c.threshold)} -> {'pass' if c.passed else 'FAIL'}")
        lines += [f"stat.{k}={_fmt(v)}" for k, v in self.statistics.items()]
        lines += [f"diagnostic.{k}={_fmt(v)}" for k, v in self.diagnostics.items()]
        lines += [f"excluded.{k}={v}" for k, v in self.exclusions.items()]
        for k, (v, prov) in self.constants.items():
            lines += [f"constant.{k}={_fmt(v)}", f"constant.{k}.provenance={prov}"]
        for name, mat in self.matrices.items():
            for j, row in enumerate(np.atleast_2d(mat)):
                lines.append(f"matrix.{name}[{j}]=" + " ".join(_fmt(x) for x in row))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["suite,kind,name,value,threshold,relation,passed"]
        for c in self.checks:
            rows.append(f"{self.suite},check,{c.name},{_fmt(c.value)},{_fmt(c.threshold)},{c.relation},{int(c.passed)}")
        for kind, d in (("stat", self.statistics), ("diagnostic", self.diagnostics), ("excluded", self.exclusions)):
            rows += [f"{self.suite},{kind},{k},{_fmt(v)},,," for k, v in d.items()]
        return "\n".join(rows) + "\n"

    def write(self, directory: Path, stem: str | None = None) -> list[Path]:
        """Write text, CSV and gnuplot files; return the paths written."""
        directory = Path(directory)
        stem = stem or f"report_{self.suite}"
        written = [directory / f"{stem}.txt", directory / f"{stem}.csv"]
        written[0].write_text(self.to_text())
        written[1].write_text(self.to_csv())
        plots = []
        if self.residuals is not None and self.residuals.size:
            counts, edges = np.histogram(self.residuals, bins=40, density=True)
            dat = directory / f"{stem}_hist.dat"
            dat.write_text("".join(f"{_fmt(0.5 * (a + b))} {_fmt(c)}\n" for a, b, c in zip(edges[:-1], edges[1:], counts)))
            written.append(dat)
            plots.append(
                f"set output '{stem}_hist.png'\n"
                f"plot '{dat.name}' using 1:2 with boxes title 'residuals', "
                "exp(-x*x/2)/sqrt(2*pi) title 'N(0,1)'\n"
            )
        for name, mat in self.matrices.items():
            dat = directory / f"{stem}_{name}.dat"
            mat = np.atleast_2d(mat)
            dat.write_text("".join(" ".join(_fmt(x) for x in row) + "\n" for row in mat))
            written.append(dat)
            plots.append(f"set output '{stem}_{name}.png'\nplot '{dat.name}' matrix with image title '{name}'\n")
        if plots:
            gp = directory / f"{stem}.gp"
            gp.write_text("set terminal png\n" + "".join(plots))
            written.append(gp)
        return written


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (list, tuple)):
        return ";".join(_fmt(v) for v in x)
    return str(x)


def _constants_block(constants: ModelConstants, *names: str) -> dict[str, tuple[float, str]]:
    names = names or ModelConstants.NUMERIC
    return {k: (float(getattr(constants, k)), constants.provenance.get(k, "")) for k in names}


# ---------------------------------------------------------------------------
# suite helpers


def _canonical(ensemble: Ensemble) -> Ensemble:
    order = np.argsort(ensemble.replica_index, kind="stable")
    if np.array_equal(order, np.arange(order.size)):
        return ensemble
    return ensemble.permuted(order)


def _exclusions(ens: Ensemble, WT: np.ndarray, w_min: float) -> tuple[np.ndarray, dict[str, int]]:
    valid = ens.valid
    extinct = valid & ens.extinct
    low = valid & ~ens.extinct & (WT < w_min)
    keep = valid & ~ens.extinct & (WT >= w_min)
    counts = {
        "total": int(len(ens)),
        "guard_tripped": int((~valid).sum()),
        "extinct": int(extinct.sum()),
        "low_W": int(low.sum()),
        "retained": int(keep.sum()),
    }
    return keep, counts


def _check_clt_horizon(constants: ModelConstants, t: float, T: float) -> None:
    if T - t < 4.0 / constants.alpha - 1e-12:
        raise PreconditionError(f"T - t = {T - t!r} is below 4/alpha = {4.0 / constants.alpha!r}")


def clt_residuals(ens: Ensemble, constants: ModelConstants, c_value: float, t: float, T: float, keep) -> np.ndarray:
    """e^{alpha t/2} (W_T - W_t) / sqrt(c W_T) on the retained replicas."""
    WT = ens.W[keep, ens.column(T)]
    Wt = ens.W[keep, ens.column(t)]
    return math.exp(constants.alpha * t / 2.0) * (WT - Wt) / np.sqrt(c_value * WT)


def _normality_checks(r: np.ndarray, prefix: str = "") -> tuple[list[Check], dict[str, float]]:
    r = np.sort(r)
    n = r.size
    d = ks_distance(r)
    mean = float(r.mean())
    var = float(r.var(ddof=1))
    checks = [
        Check(f"{prefix}ks_distance", d, KS_COEF / math.sqrt(n)),
        Check(f"{prefix}abs_mean", abs(mean), 4.0 / math.sqrt(n)),
        Check(f"{prefix}abs_var_minus_1", abs(var - 1.0), 0.1),
    ]
    return checks, {f"{prefix}n": n, f"{prefix}mean": mean, f"{prefix}var": var}


# ---------------------------------------------------------------------------
# suites


def verify_lln_q(
    ensemble: Ensemble, constants: ModelConstants, t: float, T: float | None = None, min_replicas: int = 1000
) -> VerificationReport:
    """Scaled squared-weight sum exp(alpha t) Q_t against its deterministic limit times W."""
    alpha = constants.alpha
    if not math.exp(-alpha * t) < 0.01:
        raise PreconditionError(f"exp(-alpha t) = {math.exp(-alpha * t)!r} is not below 0.01")
    ens = _canonical(ensemble)
    T = float(ens.grid[-1]) if T is None else T
    valid = ens.valid
    n = int(valid.sum())
    if n < min_replicas:
        raise TooFewReplicas(f"{n} valid replicas; at least {min_replicas} needed")
    target = constants.lln_q_limit
    x = np.sort(math.exp(alpha * t) * ens.Q[valid, ens.column(t)])
    mean, se = float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))

    WT = ens.W[:, ens.column(T)]
    pos = valid & (WT > 0.01)
    ratio = np.sort(math.exp(alpha * t) * ens.Q[pos, ens.column(t)] / (target * WT[pos]))
    r_mean, r_se = float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(ratio.size))
    _, counts = _exclusions(ens, WT, 0.01)
    return VerificationReport(
        suite="lln",
        checks=[
            Check("mean_minus_target_in_se", abs(mean - target) / se, 4.0),
            Check("ratio_mean_minus_1_in_se", abs(r_mean - 1.0) / r_se, 4.0),
        ],
        exclusions=counts,
        constants=_constants_block(constants, "alpha", "m_prime_alpha", "m_two_alpha"),
        parameters={"t": t, "T": T, "ratio_w_min": 0.01},
        statistics={"target": target, "mean": mean, "se": se, "ratio_mean": r_mean, "ratio_se": r_se, "n": n,
                    "n_ratio": int(ratio.size)},
    )


def verify_clt(
    ensemble: Ensemble,
    constants: ModelConstants,
    c_table: CDeltaTable,
    t: float,
    T: float,
    w_min: float = W_MIN,
    min_retained: int = MIN_RETAINED,
) -> VerificationReport:
    """One-dimensional normality of the scaled martingale increment."""
    _check_clt_horizon(constants, t, T)
    ens = _canonical(ensemble)
    WT = ens.W[:, ens.column(T)]
    keep, counts = _exclusions(ens, WT, w_min)
    if counts["retained"] < max(min_retained, 2):
        raise TooFewRetained(f"{counts['retained']} retained replicas; at least {min_retained} needed")
    c = c_table.at(T - t)
    r = clt_residuals(ens, constants, c.value, t, T, keep)
    checks, stats = _normality_checks(r)
    slope = float(np.polyfit(WT[keep], r * r, 1)[0])
    consts = _constants_block(constants, "alpha", "sigma2", "c_inf")
    consts[f"c_delta[{T - t!r}]"] = (c.value, c_table.provenance)
    return VerificationReport(
        suite="clt",
        checks=checks,
        exclusions=counts,
        constants=consts,
        parameters={"t": t, "T": T, "w_min": w_min},
        statistics=stats | {"c_delta_error": c.error},
        diagnostics={"slope_R2_on_W_T": slope},
        residuals=np.sort(r),
    )


def _pairwise_cov(X: np.ndarray) -> np.ndarray:
    n, m = X.shape
    C = X - X.mean(axis=0)
    out = np.empty((m, m))
    for j in range(m):
        for k in range(j, m):
            out[j, k] = out[k, j] = float(np.dot(C[:, j], C[:, k])) / (n - 1)
    return out


def _bootstrap_cov_se(X: np.ndarray, n_boot: int, rng: np.random.Generator) -> np.ndarray:
    n, m = X.shape
    idx = rng.integers(0, n, size=(n_boot, n))
    out = np.empty((m, m))
    for j in range(m):
        for k in range(j, m):
            a, b = X[:, j][idx], X[:, k][idx]
            cov = ((a * b).sum(axis=1) - a.sum(axis=1) * b.sum(axis=1) / n) / (n - 1)
            out[j, k] = out[k, j] = float(cov.std(ddof=1))
    return out


def verify_fclt_cov(
    ensemble: Ensemble,
    constants: ModelConstants,
    c_table: CDeltaTable,
    t: float,
    s_grid,
    T: float,
    w_min: float = W_MIN,
    min_retained: int = MIN_RETAINED,
    n_boot: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
) -> VerificationReport:
    """Covariance of the increments after t + s_j against c_inf exp(-alpha max(s_j, s_k))."""
    s_grid = [float(s) for s in s_grid]
    alpha = constants.alpha
    if t + max(s_grid) + 4.0 / alpha > T + 1e-12:
        raise GridBeyondHorizon(f"t + max(s) + 4/alpha = {t + max(s_grid) + 4.0 / alpha!r} exceeds T = {T!r}")
    ens = _canonical(ensemble)
    WT = ens.W[:, ens.column(T)]
    keep, counts = _exclusions(ens, WT, w_min)
    if counts["retained"] < max(min_retained, 2):
        raise TooFewRetained(f"{counts['retained']} retained replicas; at least {min_retained} needed")
    W_keep = WT[keep]
    V = np.column_stack(
        [math.exp(alpha * t / 2.0) * (W_keep - ens.W[keep, ens.column(t + s)]) / np.sqrt(W_keep) for s in s_grid]
    )
    cov = _pairwise_cov(V)
    se = _bootstrap_cov_se(V, n_boot, np.random.default_rng(seed))
    s = np.array(s_grid)
    target = constants.c_inf * np.exp(-alpha * np.maximum.outer(s, s))
    z = np.abs(cov - target) / se

    checks = []
    m = len(s_grid)
    for j in range(m):
        for k in range(j, m):
            checks.append(Check(f"cov[{j},{k}]_in_bootstrap_se", float(z[j, k]), 5.0))
    stats = {}
    residuals = None
    consts = _constants_block(constants, "alpha", "c_inf")
    for j, sj in enumerate(s_grid):
        c = c_table.at(T - t - sj)
        r = clt_residuals(ens, constants, c.value, t + sj, T, keep)
        mc, ms = _normality_checks(r, prefix=f"marginal[{j}].")
        checks += mc
        stats |= ms
        consts[f"c_delta[{T - t - sj!r}]"] = (c.value, c_table.provenance)
        if j == 0:
            residuals = np.sort(r)
    return VerificationReport(
        suite="fclt",
        checks=checks,
        exclusions=counts,
        constants=consts,
        parameters={"t": t, "T": T, "s_grid": s_grid, "w_min": w_min, "bootstrap": n_boot, "seed": seed},
        statistics=stats,
        residuals=residuals,
        matrices={"covariance": cov, "target": target, "bootstrap_se": se},
    )


def verify_lil(
    ensemble: Ensemble,
    constants: ModelConstants,
    window: tuple[float, float],
    T: float,
    w_min: float = W_MIN,
    min_retained: int = 300,
    W_scale: float = 1.0,
) -> VerificationReport:
    """Band sanity for the iterated-logarithm normalization (a WEAK check).

    ``W_scale`` multiplies W_T in the normalization only; it exists for
    mis-scaled control runs.
    """
    t0, t1 = float(window[0]), float(window[1])
    alpha = constants.alpha
    if t0 < 2.0 or t1 <= t0:
        raise PreconditionError("window must satisfy 2 <= t0 < t1")
    if t1 + 6.0 / alpha > T + 1e-12:
        raise WindowBeyondHorizon(f"t1 + 6/alpha = {t1 + 6.0 / alpha!r} exceeds T = {T!r}")
    ens = _canonical(ensemble)
    WT = ens.W[:, ens.column(T)]
    keep, counts = _exclusions(ens, WT, w_min)
    if counts["retained"] < max(min_retained, 2):
        raise TooFewRetained(f"{counts['retained']} retained replicas; at least {min_retained} needed")
    cols = np.flatnonzero((ens.grid >= t0 - 1e-12) & (ens.grid <= t1 + 1e-12))
    tg = ens.grid[cols]
    Wk = WT[keep][:, None]
    norm = np.exp(alpha * tg / 2.0) / np.sqrt(2.0 * constants.c_inf * W_scale * Wk * np.log(tg))
    Y = (Wk - ens.W[keep][:, cols]) * norm
    L = Y.max(axis=1)
    M = Y.min(axis=1)
    medL, medM = float(np.median(L)), float(np.median(M))
    valid = int(ens.valid.sum())
    frac = counts["extinct"] / valid
    q = constants.extinction_q
    return VerificationReport(
        suite="lil",
        checks=[
            Check("median_max_low", medL, 0.4, ">="),
            Check("median_max_high", medL, 1.3),
            Check("median_min_low", medM, -1.3, ">="),
            Check("median_min_high", medM, -0.4),
            Check("symmetry_gap", abs(medL + medM), 0.3),
        ],
        exclusions=counts,
        constants=_constants_block(constants, "alpha", "c_inf", "extinction_q"),
        parameters={"window": (t0, t1), "T": T, "grid_points": int(cols.size), "w_min": w_min, "W_scale": W_scale},
        statistics={"median_max": medL, "median_min": medM, "n": int(L.size)},
        diagnostics={
            "extinct_fraction": frac,
            "extinct_fraction_minus_q_in_se": abs(frac - q) / math.sqrt(q * (1 - q) / valid),
        },
        weak=True,
        residuals=np.sort(L),
    )


def verify_mean_square(
    ensemble: Ensemble,
    constants: ModelConstants,
    c_table: CDeltaTable,
    t: float,
    T: float,
    w_min: float = W_MIN,
) -> VerificationReport:
    """exp(alpha t) E[(W_T - W_t)^2] against c_{T-t} and, for long lags, c_inf.

    The mean runs over every valid replica (extinct ones contribute 0):
    the target is an unconditional second moment.
    """
    _check_clt_horizon(constants, t, T)
    ens = _canonical(ensemble)
    WT = ens.W[:, ens.column(T)]
    _, counts = _exclusions(ens, WT, w_min)
    valid = ens.valid
    n = int(valid.sum())
    if n < 2:
        raise TooFewRetained(f"{n} valid replicas")
    x = np.sort(math.exp(constants.alpha * t) * (WT[valid] - ens.W[valid, ens.column(t)]) ** 2)
    mean, se = float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))
    c = c_table.at(T - t)
    combined = math.hypot(se, c.error)
    checks = [Check("mean_minus_c_delta_in_combined_se", abs(mean - c.value) / combined if combined > 0 else
                    (0.0 if mean == c.value else math.inf), 4.0)]
    if T - t >= 10.0 / constants.alpha - 1e-12:
        rel = abs(mean - constants.c_inf) / constants.c_inf if constants.c_inf > 0 else abs(mean)
        checks.append(Check("relative_gap_to_c_inf", rel, 0.1))
    consts = _constants_block(constants, "alpha", "c_inf")
    consts[f"c_delta[{T - t!r}]"] = (c.value, c_table.provenance)
    return VerificationReport(
        suite="meansq",
        checks=checks,
        exclusions=counts,
        constants=consts,
        parameters={"t": t, "T": T},
        statistics={"mean": mean, "se": se, "c_delta": c.value, "c_delta_error": c.error, "n": n},
    )
