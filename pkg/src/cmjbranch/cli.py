"""Command-line driver: ``constants``, ``simulate``, ``verify <suite>``, ``report``.

Configuration is an INI file with three sections::

    [law]
    kind = bernoulli_split        # poisson_ages | deterministic_ages | bernoulli_split | iid_litter
    p = 0.75
    lifetime = exponential        # exponential | fixed | uniform
    lifetime_mean = 1.0           # lifetime_a for fixed, lifetime_lo/lifetime_hi for uniform
    # poisson_ages:       rate = 2.0
    # deterministic_ages: ages = 1.0, 1.0
    # iid_litter:         count = poisson | geometric | fixed, count_mean = 2.0 (count_n for fixed),
    #                     age = exponential | fixed | uniform, age_mean / age_a / age_lo, age_hi

    [run]
    horizon_T = 20
    grid_start = 0                # or: grid = 0.5, 1.5, 2.5
    grid_stop = 20
    grid_step = 0.1
    age_cap = auto
    replicas = 10000
    seed = 1
    max_births = 10000000
    jobs = 1

    [verify]
    suites = lln, clt, fclt, meansq, cdelta
    t = 6
    T = 18
    ...

Option names are case-sensitive.

Exit codes: 0 success or pass, 1 a verification check failed, 2 invalid
configuration, violated model assumption or violated precondition.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .engine import DEFAULT_MAX_BIRTHS, TRUNCATION_BOUND, Ensemble, auto_age_cap, run_ensemble, truncation_bias_bound
from .errors import CMJError, ConfigError, PreconditionError
from .malthusian import ModelConstants, derive_constants
from .reproduction import (
    BernoulliSplit,
    DeterministicAges,
    Exponential,
    Fixed,
    FixedAge,
    Geometric,
    IIDLitter,
    Poisson,
    PoissonAges,
    ReproductionLaw,
    Uniform,
)

SUITES = ("lln", "clt", "fclt", "lil", "meansq", "cdelta")
PATHS_CSV = "paths.csv"
GENERATIONS_CSV = "generations.csv"
MANIFEST = "manifest.txt"


# ---------------------------------------------------------------------------
# configuration


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _age_dist(sec, prefix: str):
    kind = sec.get(prefix, "exponential").strip().lower()
    if kind == "exponential":
        return Exponential(sec.getfloat(f"{prefix}_mean", 1.0))
    if kind == "fixed":
        return FixedAge(sec.getfloat(f"{prefix}_a"))
    if kind == "uniform":
        return Uniform(sec.getfloat(f"{prefix}_lo"), sec.getfloat(f"{prefix}_hi"))
    raise ConfigError(f"unknown {prefix} distribution {kind!r}")


def law_from_section(sec) -> ReproductionLaw:
    kind = sec.get("kind", "").strip().lower()
    try:
        if kind == "poisson_ages":
            return PoissonAges(sec.getfloat("rate"))
        if kind == "deterministic_ages":
            return DeterministicAges(tuple(_floats(sec["ages"])))
        if kind == "bernoulli_split":
            return BernoulliSplit(sec.getfloat("p"), _age_dist(sec, "lifetime"))
        if kind == "iid_litter":
            ckind = sec.get("count", "poisson").strip().lower()
            if ckind == "poisson":
                count = Poisson(sec.getfloat("count_mean"))
            elif ckind == "geometric":
                count = Geometric(sec.getfloat("count_mean"))
            elif ckind == "fixed":
                count = Fixed(sec.getint("count_n"))
            else:
                raise ConfigError(f"unknown count distribution {ckind!r}")
            return IIDLitter(count, _age_dist(sec, "age"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[law] {kind}: {exc}") from exc
    raise ConfigError(f"unknown law kind {kind!r}")


def _grid(sec, horizon: float) -> tuple[float, ...]:
    if "grid" in sec:
        grid = tuple(_floats(sec["grid"]))
    else:
        start = sec.getfloat("grid_start", 0.0)
        stop = sec.getfloat("grid_stop", horizon)
        step = sec.getfloat("grid_step")
        if step is None or not step > 0:
            raise ConfigError("grid_step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9))
        # rounding keeps k * step on the decimal value a user would write
        grid = tuple(round(start + k * step, 12) for k in range(n + 1))
    if not grid:
        raise ConfigError("empty grid")
    return grid


@dataclass
class RunConfig:
    law: ReproductionLaw
    law_text: dict
    horizon_T: float
    grid: tuple[float, ...]
    age_cap: float | None
    replicas: int
    seed: int
    max_births: int
    jobs: int
    verify: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path, seed: int | None = None, jobs: int | None = None) -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        # keys are case-sensitive: [verify] has both t and T
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_parser(parser, seed=seed, jobs=jobs)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser, seed=None, jobs=None) -> "RunConfig":
        if "law" not in parser:
            raise ConfigError("missing [law] section")
        law = law_from_section(parser["law"])
        run = parser["run"] if "run" in parser else parser[parser.default_section]
        try:
            horizon = run.getfloat("horizon_T", 20.0)
            if not horizon > 0:
                raise ConfigError("horizon_T must be positive")
            grid = _grid(run, horizon)
            cap_text = run.get("age_cap", "auto").strip().lower()
            age_cap = None if cap_text == "auto" else float(cap_text)
            cfg = cls(
                law=law,
                law_text=dict(parser["law"]),
                horizon_T=horizon,
                grid=grid,
                age_cap=age_cap,
                replicas=run.getint("replicas", 1000),
                seed=run.getint("seed", 0) if seed is None else int(seed),
                max_births=run.getint("max_births", DEFAULT_MAX_BIRTHS),
                jobs=run.getint("jobs", 1) if jobs is None else int(jobs),
                verify=dict(parser["verify"]) if "verify" in parser else {},
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if cfg.replicas < 1 or cfg.max_births < 1 or cfg.jobs < 1:
            raise ConfigError("replicas, max_births and jobs must be positive")
        if not 0 <= cfg.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if any(b < a for a, b in zip(grid, grid[1:])) or grid[0] < 0 or grid[-1] > horizon:
            raise ConfigError("grid must be sorted inside [0, horizon_T]")
        return cfg

    def resolve_age_cap(self, constants: ModelConstants) -> float:
        if self.age_cap is None:
            return auto_age_cap(self.law, constants.alpha)
        bias = truncation_bias_bound(self.law, constants.alpha, self.age_cap)
        if bias >= TRUNCATION_BOUND:
            raise PreconditionError(f"age_cap {self.age_cap} drops discounted mass {bias:g} >= {TRUNCATION_BOUND:g}")
        return self.age_cap

    def run_echo(self, age_cap: float) -> list[str]:
        lines = [f"law.{k}={v}" for k, v in sorted(self.law_text.items())]
        lines += [
            f"run.horizon_T={self.horizon_T!r}",
            "run.grid=" + ",".join(repr(t) for t in self.grid),
            f"run.age_cap={age_cap!r}",
            f"run.replicas={self.replicas}",
            f"run.seed={self.seed}",
            f"run.max_births={self.max_births}",
        ]
        return lines

    # verify-section accessors
    def vfloat(self, key: str, default=None) -> float:
        if key in self.verify:
            return float(self.verify[key])
        if default is None:
            raise ConfigError(f"[verify] {key} is required")
        return float(default)

    def vfloats(self, key: str, default=()) -> list[float]:
        return _floats(self.verify[key]) if key in self.verify else list(default)


# ---------------------------------------------------------------------------
# outputs


class _Outputs:
    """Files written by one command; on failure every one of them is removed."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.directory / name
        self.written.append(p)
        return p

    def text(self, name: str, content: str) -> Path:
        p = self.path(name)
        p.write_text(content)
        return p

    def discard(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)


def _constants(cfg: RunConfig, debug_degenerate: bool) -> ModelConstants:
    return derive_constants(cfg.law, allow_degenerate=debug_degenerate)


def _manifest(cfg: RunConfig, constants: ModelConstants, age_cap: float, ens: Ensemble, wall: float) -> str:
    valid = ens.valid
    n = int(valid.sum())
    ext = int((ens.extinct & valid).sum())
    frac = ext / n if n else float("nan")
    se = math.sqrt(frac * (1 - frac) / n) if n else float("nan")
    lines = cfg.run_echo(age_cap)
    lines += [f"constant.{line}" for line in constants.to_text().splitlines()]
    lines += [
        f"seeds=PCG64(SeedSequence({cfg.seed}, spawn_key=(i,))) for i in 0..{cfg.replicas - 1}",
        f"jobs={cfg.jobs}",
        f"wall_seconds={wall:.3f}",
        f"births_total={int(ens.births.sum())}",
        f"excluded.guard_tripped={int((~valid).sum())}",
        f"extinct={ext}",
        f"extinct_fraction={frac!r}",
        f"extinct_fraction_se={se!r}",
    ]
    return "\n".join(lines) + "\n"


def _simulate(cfg: RunConfig, constants: ModelConstants, out: _Outputs) -> Ensemble:
    age_cap = cfg.resolve_age_cap(constants)
    start = time.perf_counter()
    ens = run_ensemble(
        cfg.law, constants, cfg.horizon_T, cfg.grid, cfg.replicas, cfg.seed,
        age_cap=age_cap, max_births=cfg.max_births, jobs=cfg.jobs,
    )
    wall = time.perf_counter() - start
    ens.write_csv(out.path(PATHS_CSV), out.path(GENERATIONS_CSV))
    out.text(MANIFEST, _manifest(cfg, constants, age_cap, ens, wall))
    return ens


def _load_or_simulate(cfg: RunConfig, constants: ModelConstants, out: _Outputs) -> Ensemble:
    """Reuse the ensemble in the output directory when its manifest matches the run."""
    d = out.directory
    manifest = d / MANIFEST
    if manifest.exists() and (d / PATHS_CSV).exists():
        echo = cfg.run_echo(cfg.resolve_age_cap(constants))
        have = manifest.read_text().splitlines()
        if have[: len(echo)] == echo:
            return Ensemble.read_csv(d / PATHS_CSV, d / GENERATIONS_CSV, seed=cfg.seed)
    return _simulate(cfg, constants, out)


def _c_table(cfg: RunConfig, constants: ModelConstants, ens: Ensemble, deltas) -> analysis.CDeltaTable:
    curve = analysis.estimate_variance_curve(ens, constants)
    deltas = sorted(set(round(d, 12) for d in deltas))
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2**32,)))
    table = analysis.compute_c_delta_table(
        cfg.law, constants, curve, deltas, int(cfg.vfloat("n_mc", 200_000)), rng
    )
    scale = cfg.vfloat("debug_c_scale", 1.0)
    return table if scale == 1.0 else table.scaled(scale)


def _cdelta_report(cfg: RunConfig, constants: ModelConstants, table: analysis.CDeltaTable) -> analysis.VerificationReport:
    checks = [analysis.Check("monotone_violations", float(len(table.monotone_violations())), 0.0)]
    stats = {}
    for e in table.entries:
        stats[f"c[{e.delta!r}]"] = e.value
        stats[f"c[{e.delta!r}].error"] = e.error
        checks.append(analysis.Check(f"c[{e.delta!r}]_minus_c_inf_over_error", (e.value - constants.c_inf) / e.error
                                     if e.error > 0 else 0.0, 1.0))
    big = max(table.entries, key=lambda e: e.delta)
    if big.delta >= 10.0 / constants.alpha:
        tol = max(0.05 * constants.c_inf, big.error)
        checks.append(analysis.Check(f"abs_c[{big.delta!r}]_minus_c_inf", abs(big.value - constants.c_inf), tol))
    small = min(table.entries, key=lambda e: e.delta)
    if small.delta <= 1e-3:
        checks.append(analysis.Check(f"c[{small.delta!r}]_over_c_inf", small.value / constants.c_inf, 0.05))
    return analysis.VerificationReport(
        suite="cdelta",
        checks=checks,
        exclusions={},
        constants={"c_inf": (constants.c_inf, constants.provenance.get("c_inf", ""))},
        parameters={"deltas": [float(d) for d in table.deltas], "n_mc": int(cfg.vfloat("n_mc", 200_000))},
        statistics=stats,
    )


def _run_suite(suite: str, cfg: RunConfig, constants: ModelConstants, ens: Ensemble) -> analysis.VerificationReport:
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    if constants.lattice:
        raise PreconditionError("theorem verification is restricted to non-lattice laws")
    t = cfg.vfloat("t", 6.0)
    T = cfg.vfloat("T", min(18.0, cfg.horizon_T))
    w_min = cfg.vfloat("w_min", analysis.W_MIN)
    min_retained = int(cfg.vfloat("min_retained", analysis.MIN_RETAINED))
    if suite == "lln":
        return analysis.verify_lln_q(ens, constants, cfg.vfloat("lln_t", 10.0), cfg.vfloat("lln_T", cfg.horizon_T))
    if suite == "lil":
        window = cfg.vfloats("window", (8.0, 14.0))
        if len(window) != 2:
            raise ConfigError("window needs two times")
        return analysis.verify_lil(
            ens, constants, (window[0], window[1]), cfg.vfloat("lil_T", cfg.horizon_T), w_min,
            int(cfg.vfloat("lil_min_retained", 300)),
        )
    if suite == "clt":
        if T - t < 4.0 / constants.alpha - 1e-12:
            raise PreconditionError(f"T - t = {T - t!r} is below 4/alpha")
        table = _c_table(cfg, constants, ens, [T - t])
        return analysis.verify_clt(ens, constants, table, t, T, w_min, min_retained)
    if suite == "fclt":
        s_grid = cfg.vfloats("s_grid", (0.0, 1.0, 2.0))
        if t + max(s_grid) + 4.0 / constants.alpha > T + 1e-12:
            raise PreconditionError("t + max(s_grid) + 4/alpha exceeds T")
        table = _c_table(cfg, constants, ens, [T - t - s for s in s_grid])
        return analysis.verify_fclt_cov(
            ens, constants, table, t, s_grid, T, w_min, min_retained,
            int(cfg.vfloat("bootstrap", analysis.BOOTSTRAP_RESAMPLES)), int(cfg.vfloat("bootstrap_seed", 0)),
        )
    if suite == "meansq":
        mt, mT = cfg.vfloat("meansq_t", t), cfg.vfloat("meansq_T", cfg.horizon_T)
        if mT - mt < 4.0 / constants.alpha - 1e-12:
            raise PreconditionError(f"T - t = {mT - mt!r} is below 4/alpha")
        table = _c_table(cfg, constants, ens, [mT - mt])
        return analysis.verify_mean_square(ens, constants, table, mt, mT, w_min)
    deltas = cfg.vfloats("deltas", (0.001, 0.5, 1, 2, 4, 8, 12, 16, 20))
    table = _c_table(cfg, constants, ens, deltas)
    return _cdelta_report(cfg, constants, table)


# ---------------------------------------------------------------------------
# commands


def cmd_constants(cfg: RunConfig, out_dir: Path | None, debug_degenerate: bool = False) -> int:
    constants = _constants(cfg, debug_degenerate)
    print(constants.to_text(), end="")
    if out_dir is not None:
        out = _Outputs(out_dir)
        try:
            out.text("constants.csv", constants.csv_header() + "\n" + constants.csv_row() + "\n")
        except BaseException:
            out.discard()
            raise
    return 0


def cmd_simulate(cfg: RunConfig, out_dir: Path, debug_degenerate: bool = False) -> int:
    constants = _constants(cfg, debug_degenerate)
    out = _Outputs(out_dir)
    try:
        ens = _simulate(cfg, constants, out)
    except BaseException:
        out.discard()
        raise
    valid = ens.valid
    print(f"replicas={len(ens)} extinct={int((ens.extinct & valid).sum())} guard_tripped={int((~valid).sum())}")
    return 0


def cmd_verify(cfg: RunConfig, suite: str, out_dir: Path, debug_degenerate: bool = False) -> int:
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    constants = _constants(cfg, debug_degenerate)
    out = _Outputs(out_dir)
    try:
        ens = _load_or_simulate(cfg, constants, out)
        report = _run_suite(suite, cfg, constants, ens)
        out.written += report.write(out.directory)
    except BaseException:
        out.discard()
        raise
    print(report.to_text(), end="")
    return 0 if report.passed else 1


def cmd_report(cfg: RunConfig, out_dir: Path, debug_degenerate: bool = False) -> int:
    suites = [s.strip() for s in cfg.verify.get("suites", "lln, clt, fclt, meansq, cdelta").split(",") if s.strip()]
    constants = _constants(cfg, debug_degenerate)
    out = _Outputs(out_dir)
    try:
        ens = _load_or_simulate(cfg, constants, out)
        lines = []
        ok = True
        for suite in suites:
            report = _run_suite(suite, cfg, constants, ens)
            out.written += report.write(out.directory)
            ok &= report.passed
            lines.append(f"{suite}={'pass' if report.passed else 'FAIL'}{' (WEAK)' if report.weak else ''}")
        lines.append(f"all_passed={int(ok)}")
        out.text("summary.txt", "\n".join(lines) + "\n")
    except BaseException:
        out.discard()
        raise
    print("\n".join(lines))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmjbranch", description="Simulate CMJ branching processes and check their limit theorems.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="INI configuration file")
    common.add_argument("--out", type=Path, default=None, help="output directory (default: out; constants writes no file unless given)")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (overrides [run] jobs)")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides [run] seed)")
    common.add_argument("--debug-degenerate", action="store_true", help="accept laws with sigma^2 = 0")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("constants", parents=[common], help="print the model constants")
    sub.add_parser("simulate", parents=[common], help="simulate an ensemble and write CSVs")
    v = sub.add_parser("verify", parents=[common], help="run one verification suite")
    v.add_argument("suite", choices=SUITES)
    sub.add_parser("report", parents=[common], help="run every suite listed in [verify] suites")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, jobs=args.jobs)
        if args.command == "constants":
            return cmd_constants(cfg, args.out, args.debug_degenerate)
        out = args.out if args.out is not None else Path("out")
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.debug_degenerate)
        if args.command == "verify":
            return cmd_verify(cfg, args.suite, out, args.debug_degenerate)
        return cmd_report(cfg, out, args.debug_degenerate)
    except (CMJError, OSError) as exc:
        # assumption, precondition and configuration errors alike
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
