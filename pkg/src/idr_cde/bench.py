"""Synthetic benchmarks: data generation, the method registry and the
replication harness.

Outcomes follow ``Z = 1 + X1 + X2 + (0.5 + X1 - X2 + X3) A + eps`` with
uniform covariates on ``[-1, 1]`` and randomised actions, so the rule
``sign(0.5 + X1 - X2 + X3)`` maximises the mean outcome. The three
scenarios differ in the error distribution:

1. log-normal, ``eps = exp(N(0, 2^2))``
2. Weibull with scale 0.5 and shape 0.3
3. heteroscedastic log-normal, ``eps = exp(N(0, (2 |1 + X1 + X2|)^2))``

The residual weighted learning baseline is not part of the method
registry.
"""

from __future__ import annotations

__all__ = [
    "METHODS",
    "BenchConfig",
    "BenchmarkReport",
    "Failure",
    "Method",
    "MethodOutcome",
    "ReportRow",
    "ScenarioSpec",
    "oracle_method",
    "random_method",
    "run_benchmark",
    "simulate",
    "true_rule",
]

import abc
import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Dict, List, Mapping, Optional, Protocol, Tuple

import numpy as np
import numpy.typing as npt

from .baselines import DEFAULT_GRID, fit_dlearn, fit_l1pls, select_lambda
from .core import AllocParams, ConfigError, Dataset, DecisionRule, SolverError, UtilitySpec
from .evaluation import (
    Undefined,
    cross_validate,
    empirical_value,
    matched_quantiles,
    misclassification,
)
from .fitting import FitSpec, WarmStart, fit
from .utils import mean_se, rng_for, sign

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int
    n: int
    p: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenario not in (1, 2, 3):
            raise ConfigError(f"unknown scenario {self.scenario}")
        if self.p < 3:
            raise ConfigError("p >= 3 required")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def simulate(s: ScenarioSpec, stream: Tuple[int, ...] = ()) -> Dataset:
    """Draws ``s.n`` samples of scenario ``s.scenario``, from the random
    stream ``stream`` of ``s.seed``.
    """
    rng = rng_for(s.seed, *stream)
    x = rng.uniform(-1.0, 1.0, size=(s.n, s.p))
    a = np.where(rng.random(s.n) < 0.5, 1.0, -1.0)
    if s.scenario == 1:
        eps = np.exp(2.0 * rng.standard_normal(s.n))
    elif s.scenario == 2:
        u = 1.0 - rng.random(s.n)
        eps = 0.5 * (-np.log(u)) ** (1 / 0.3)
    else:
        eps = np.exp(2.0 * np.abs(1 + x[:, 0] + x[:, 1]) * rng.standard_normal(s.n))
    z = 1 + x[:, 0] + x[:, 1] + (0.5 + x[:, 0] - x[:, 1] + x[:, 2]) * a + eps
    return Dataset(x, a, z, np.full(s.n, 0.5))


def true_rule(x: npt.ArrayLike, /) -> FloatArray:
    """``sign(0.5 + x1 - x2 + x3)``, zero going to ``+1``."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    if xs.shape[1] < 3:
        raise ValueError("the true rule needs at least 3 covariates")
    return sign(0.5 + xs[:, 0] - xs[:, 1] + xs[:, 2])


@dataclass(frozen=True)
class BenchConfig:
    """Replication protocol.

    IDR-CDE uses the penalties ``lam`` unless ``cv`` is set, in which
    case they are cross-validated over ``grid``. The baselines select
    their penalty by cross-validated prediction error unless
    ``baseline_cv`` is unset (then ``baseline_lam`` is used).
    """

    scenarios: Tuple[int, ...] = (1,)
    ns: Tuple[int, ...] = (100,)
    reps: int = 20
    p: int = 10
    test_size: int = 10_000
    methods: Tuple[str, ...] = ("idr-cde", "dlearn", "l1pls")
    seed: int = 0
    xi1: float = 0.0
    xi2: float = 2.0
    lam: Tuple[float, float] = (0.01, 0.01)
    cv: bool = False
    folds: int = 10
    grid: Optional[Tuple[Tuple[float, float], ...]] = None
    baseline_cv: bool = True
    baseline_lam: float = 0.0
    warm_start: WarmStart = "weighted"
    probs: Tuple[float, ...] = (0.25, 0.5)
    timing: bool = True
    jobs: int = 1

    def __post_init__(self) -> None:
        for name in ("scenarios", "ns", "methods", "probs", "lam"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(tuple(g) for g in self.grid))
        if self.reps < 1:
            raise ConfigError("reps must be positive")
        if self.test_size < 1:
            raise ConfigError("test_size must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        for sc in self.scenarios:
            ScenarioSpec(sc, 1, self.p)
        if len(self.lam) != 2:
            raise ConfigError("lam must hold (lam_alloc, lam_rule)")
        if not all(0 < q < 1 for q in self.probs):
            raise ConfigError("quantile levels must lie in (0, 1)")

    @property
    def utility(self) -> UtilitySpec:
        return UtilitySpec.piecewise_linear(self.xi1, self.xi2)


@dataclass(frozen=True)
class MethodOutcome:
    rule: DecisionRule
    alloc: Optional[AllocParams] = None
    dc_iterations: Optional[int] = None
    #: (lam_alloc, lam_rule) the rule was fitted with
    penalties: Optional[Tuple[float, float]] = None


class Method(Protocol):
    """Method()

    Fits a decision rule on training data. ``rng`` is the method's own
    random stream for the replication.
    """

    @abc.abstractmethod
    def __call__(
        self, train: Dataset, config: BenchConfig, rng: np.random.Generator, /
    ) -> MethodOutcome: ...


def idr_cde_method(
    train: Dataset, config: BenchConfig, rng: np.random.Generator, /
) -> MethodOutcome:
    spec = FitSpec(
        train,
        utility=config.utility,
        lam_alloc=config.lam[0],
        lam_rule=config.lam[1],
        warm_start=config.warm_start,
        certify=False,
    )
    if config.cv:
        seed = int(rng.integers(2**63))
        result = cross_validate(spec, config.grid, config.folds, seed)
        fitted, lam = result.fitted, result.best
        assert fitted is not None
    else:
        fitted, lam = fit(spec), (spec.lam_alloc, spec.lam_rule)
    return MethodOutcome(fitted.rule, fitted.alloc, fitted.iterations, lam)


def dlearn_method(
    train: Dataset, config: BenchConfig, rng: np.random.Generator, /
) -> MethodOutcome:
    lam = (
        select_lambda("dlearn", train, DEFAULT_GRID, config.folds, rng)
        if config.baseline_cv
        else config.baseline_lam
    )
    return MethodOutcome(fit_dlearn(train, lam), penalties=(0.0, lam))


def l1pls_method(
    train: Dataset, config: BenchConfig, rng: np.random.Generator, /
) -> MethodOutcome:
    lam = (
        select_lambda("l1pls", train, DEFAULT_GRID, config.folds, rng)
        if config.baseline_cv
        else config.baseline_lam
    )
    return MethodOutcome(fit_l1pls(train, lam), penalties=(0.0, lam))


def oracle_method(
    train: Dataset, config: BenchConfig, rng: np.random.Generator, /
) -> MethodOutcome:
    """The true rule, whatever the data."""
    return MethodOutcome(true_rule)


@dataclass(frozen=True)
class _CoinRule:
    seed: int

    def __call__(self, x: npt.ArrayLike, /) -> FloatArray:
        n = np.atleast_2d(np.asarray(x)).shape[0]
        return np.where(np.random.default_rng(self.seed).random(n) < 0.5, 1.0, -1.0)


def random_method(
    train: Dataset, config: BenchConfig, rng: np.random.Generator, /
) -> MethodOutcome:
    """Fair coin flips, independent of the covariates."""
    return MethodOutcome(_CoinRule(int(rng.integers(2**63))))


METHODS: Dict[str, Method] = {
    "idr-cde": idr_cde_method,
    "dlearn": dlearn_method,
    "l1pls": l1pls_method,
}


@dataclass(frozen=True)
class ReportRow:
    scenario: int
    n: int
    method: str
    metric: str
    mean: float
    se: float
    count: int


@dataclass(frozen=True)
class Failure:
    scenario: int
    n: int
    rep: int
    method: str
    error: str


@dataclass
class BenchmarkReport:
    """Mean and standard error (sd / sqrt(R)) of every metric per
    scenario, training size and method, over the successful
    replications.
    """

    rows: List[ReportRow]
    failures: List[Failure] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def get(self, scenario: int, n: int, method: str, metric: str) -> ReportRow:
        for r in self.rows:
            if (r.scenario, r.n, r.method, r.metric) == (scenario, n, method, metric):
                return r
        raise KeyError((scenario, n, method, metric))

    def to_csv(self, fp: IO[str]) -> None:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["scenario", "n", "method", "metric", "mean", "se", "count"])
        for r in self.rows:
            w.writerow([r.scenario, r.n, r.method, r.metric, repr(r.mean), repr(r.se), r.count])

    def to_dict(self) -> dict[str, object]:
        def clean(v: float) -> Optional[float]:
            return None if math.isnan(v) else v

        return {
            "rows": [
                {
                    "scenario": r.scenario,
                    "n": r.n,
                    "method": r.method,
                    "metric": r.metric,
                    "mean": clean(r.mean),
                    "se": clean(r.se),
                    "count": r.count,
                }
                for r in self.rows
            ],
            "failures": [vars(f) for f in self.failures],
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


Metrics = Dict[str, float]


def _replication(
    config: BenchConfig,
    methods: Mapping[str, Method],
    scenario: int,
    n: int,
    rep: int,
) -> Dict[str, Tuple[Optional[Metrics], Optional[str]]]:
    key = (scenario, n, rep)
    train = simulate(ScenarioSpec(scenario, n, config.p, config.seed), (*key, 0))
    test = simulate(ScenarioSpec(scenario, config.test_size, config.p, config.seed), (*key, 1))
    out: Dict[str, Tuple[Optional[Metrics], Optional[str]]] = {}
    for m, name in enumerate(config.methods):
        start = time.perf_counter()
        try:
            outcome = methods[name](train, config, rng_for(config.seed, *key, 2, m))
        except (SolverError, ValueError) as e:
            logger.warning(
                "scenario %d, n=%d, replication %d: %s failed: %s", scenario, n, rep, name, e
            )
            out[name] = (None, f"{type(e).__name__}: {e}")
            continue
        elapsed = time.perf_counter() - start
        metrics: Metrics = {
            "misclassification": misclassification(outcome.rule, true_rule, test.x)
        }
        value = empirical_value(outcome.rule, test)
        if not isinstance(value, Undefined):
            metrics["value"] = value
        quantiles = matched_quantiles(outcome.rule, test, config.probs)
        if not isinstance(quantiles, Undefined):
            for prob, q in quantiles.items():
                metrics[f"q{round(prob * 100)}"] = q
        if config.timing:
            metrics["time"] = elapsed
        if outcome.dc_iterations is not None:
            metrics["dc_iterations"] = float(outcome.dc_iterations)
        out[name] = (metrics, None)
    logger.info("scenario %d, n=%d: replication %d done", scenario, n, rep)
    return out


def run_benchmark(
    config: BenchConfig, methods: Optional[Mapping[str, Method]] = None
) -> BenchmarkReport:
    """Runs ``config.reps`` replications for every scenario and training
    size: simulate a training set, fit every method, evaluate on a fresh
    test set of ``config.test_size`` samples.

    A method failing on a replication is recorded in
    :attr:`BenchmarkReport.failures` and left out of that method's
    aggregates.

    :param methods: method registry, :data:`METHODS` by default
    """
    registry = METHODS if methods is None else methods
    if missing := [m for m in config.methods if m not in registry]:
        raise ConfigError(f"unknown method(s) {', '.join(missing)}")

    rows: List[ReportRow] = []
    failures: List[Failure] = []
    for scenario in config.scenarios:
        for n in config.ns:
            if config.jobs > 1:
                with ThreadPoolExecutor(max_workers=config.jobs) as ex:
                    results = list(
                        ex.map(
                            lambda r: _replication(config, registry, scenario, n, r),
                            range(config.reps),
                        )
                    )
            else:
                results = [
                    _replication(config, registry, scenario, n, r) for r in range(config.reps)
                ]

            for name in config.methods:
                collected: Dict[str, List[float]] = {}
                for rep, res in enumerate(results):
                    metrics, error = res[name]
                    if metrics is None:
                        failures.append(Failure(scenario, n, rep, name, error or ""))
                        continue
                    for metric, v in metrics.items():
                        collected.setdefault(metric, []).append(v)
                for metric, values in collected.items():
                    mean, se = mean_se(values)
                    rows.append(ReportRow(scenario, n, name, metric, mean, se, len(values)))

    notes = ["residual weighted learning is not included"]
    return BenchmarkReport(rows, failures, notes)