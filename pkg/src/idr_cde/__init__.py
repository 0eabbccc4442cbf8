"""Risk-aware individualized decision rules.

A decision rule ``d(x)`` picks one of two actions ``{-1, +1}`` for a
covariate vector ``x``. Rather than maximising the expected outcome,
the rules fitted here maximise an optimized certainty equivalent of
the outcome given the covariates (for instance its lower tail through
CVaR), through a difference-of-convex reformulation solved by a
proximal DC algorithm.

The top-level package re-exports what a typical user needs:

- :mod:`data and parameter types <.core>`
- :func:`fit` and its :class:`FitSpec`
- :mod:`evaluation criteria and cross-validation <.evaluation>`
- :mod:`the benchmark lab <.bench>`

The solver layers (:mod:`.qp`, :mod:`.dca`, :mod:`.epigraph`) are
only needed to set up other DC programs.
"""

from __future__ import annotations

__all__ = [
    "UNDEFINED",
    "VERSION",
    "AllocParams",
    "BenchConfig",
    "BenchmarkReport",
    "CVResult",
    "ConfigError",
    "DataError",
    "Dataset",
    "DecisionRule",
    "EvalReport",
    "FitSpec",
    "FittedIDR",
    "InfeasibleError",
    "LinearRule",
    "QPFailure",
    "RuleParams",
    "ScenarioSpec",
    "SolverError",
    "UtilitySpec",
    "cross_validate",
    "empirical_oce",
    "evaluate",
    "fit",
    "run_benchmark",
    "simulate",
]

from .bench import BenchConfig, BenchmarkReport, ScenarioSpec, run_benchmark, simulate
from .core import (
    AllocParams,
    ConfigError,
    DataError,
    Dataset,
    DecisionRule,
    InfeasibleError,
    LinearRule,
    QPFailure,
    RuleParams,
    SolverError,
    UtilitySpec,
)
from .evaluation import UNDEFINED, CVResult, EvalReport, cross_validate, evaluate
from .fitting import FitSpec, FittedIDR, fit
from .oce import empirical_oce

VERSION = (0, 1, 0)
