"""Simulation and limit-theorem checks for supercritical CMJ branching processes."""

from __future__ import annotations

from .engine import (
    BORN,
    DISCOUNTED_FRONTIER,
    CharacteristicSpec,
    Ensemble,
    ReplicaPath,
    SimConfig,
    auto_age_cap,
    many_to_one_mean_Nt,
    run_ensemble,
    run_replica,
    simulate_paths,
    truncation_bias_bound,
)
from .malthusian import ModelConstants, derive_constants, extinction_probability, solve_malthusian
from .reproduction import (
    BernoulliSplit,
    DeterministicAges,
    Exponential,
    Fixed,
    FixedAge,
    Geometric,
    IIDLitter,
    OffspringSample,
    Poisson,
    PoissonAges,
    Uniform,
    sample_offspring,
)

__all__ = [
    "BORN",
    "DISCOUNTED_FRONTIER",
    "BernoulliSplit",
    "CharacteristicSpec",
    "DeterministicAges",
    "Ensemble",
    "Exponential",
    "Fixed",
    "FixedAge",
    "Geometric",
    "IIDLitter",
    "ModelConstants",
    "OffspringSample",
    "Poisson",
    "PoissonAges",
    "ReplicaPath",
    "SimConfig",
    "Uniform",
    "auto_age_cap",
    "derive_constants",
    "extinction_probability",
    "many_to_one_mean_Nt",
    "run_ensemble",
    "run_replica",
    "sample_offspring",
    "simulate_paths",
    "solve_malthusian",
    "truncation_bias_bound",
]
