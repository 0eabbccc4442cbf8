"""Evaluation of decision rules on (test) data and cross-validation of
the penalty weights.

All criteria are inverse-propensity weighted averages over the
*matched* samples, those whose observed action agrees with the rule.
When no sample matches the criterion is :data:`UNDEFINED`.
"""

from __future__ import annotations

__all__ = [
    "UNDEFINED",
    "CVResult",
    "EvalReport",
    "FoldScore",
    "Undefined",
    "cross_validate",
    "default_grid",
    "empirical_cde",
    "empirical_value",
    "evaluate",
    "matched_quantiles",
    "misclassification",
    "rule_oce",
    "write_fold_table",
]

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from .baselines import DEFAULT_GRID
from .core import AllocParams, ConfigError, Dataset, DecisionRule, UtilitySpec
from .fitting import FitSpec, FittedIDR, fit
from .oce import SampleSet, empirical_oce, empirical_quantile
from .utils import kfold, rng_for

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


class Undefined:
    """Outcome of a criterion without any matched sample."""

    _instance: Optional[Undefined] = None

    def __new__(cls) -> Undefined:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNDEFINED"

    def __bool__(self) -> bool:
        return False

    def __reduce__(self) -> str:
        return "UNDEFINED"


UNDEFINED = Undefined()

Evaluation = Union[float, Undefined]


def _matched(rule: DecisionRule, data: Dataset) -> npt.NDArray[np.bool_]:
    return np.asarray(rule(data.x) == data.a)


def empirical_value(rule: DecisionRule, test: Dataset) -> Evaluation:
    """``sum (Z_i / pi_i) / sum (1 / pi_i)`` over the matched samples."""
    m = _matched(rule, test)
    if not m.any():
        return UNDEFINED
    inv = 1.0 / test.propensity[m]
    return float(math.fsum(test.z[m] * inv) / math.fsum(inv))


def empirical_cde(
    rule: DecisionRule, alloc: AllocParams, u: UtilitySpec, data: Dataset
) -> Evaluation:
    """Weighted average of ``alpha(X_i) + u(Z_i - alpha(X_i))`` over the
    matched samples, with weights ``1 / pi_i``.
    """
    m = _matched(rule, data)
    if not m.any():
        return UNDEFINED
    alpha = alloc(data.x[m])
    inv = 1.0 / data.propensity[m]
    return float(math.fsum((alpha + u(data.z[m] - alpha)) * inv) / math.fsum(inv))


def misclassification(rule: DecisionRule, truth: DecisionRule, x: npt.ArrayLike) -> float:
    """Fraction of the rows of ``x`` where ``rule`` and ``truth`` differ."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    return float(np.mean(rule(xs) != truth(xs)))


def matched_quantiles(
    rule: DecisionRule,
    test: Dataset,
    probs: Sequence[float] = (0.25, 0.5),
    *,
    include_unmatched: bool = False,
) -> Union[Dict[float, float], Undefined]:
    """Empirical quantiles of the matched outcomes.

    With ``include_unmatched`` the quantiles are those of
    ``Z_i 1(A_i = d(X_i))`` over every sample instead.
    """
    for prob in probs:
        if not 0 < prob < 1:
            raise ValueError(f"quantile levels must lie in (0, 1), got {prob}")
    m = _matched(rule, test)
    if not m.any():
        return UNDEFINED
    values = np.where(m, test.z, 0.0) if include_unmatched else test.z[m]
    s = SampleSet(values)
    return {prob: empirical_quantile(s, prob) for prob in probs}


def rule_oce(rule: DecisionRule, data: Dataset, u: UtilitySpec) -> Evaluation:
    """OCE of the matched outcomes weighted by ``1 / pi_i``: the
    criterion restricted to constant allocation functions.
    """
    m = _matched(rule, data)
    if not m.any():
        return UNDEFINED
    return empirical_oce(SampleSet(data.z[m], 1.0 / data.propensity[m]), u).value


@dataclass(frozen=True)
class EvalReport:
    empirical_value: Evaluation
    empirical_cde: Evaluation
    misclassification: Optional[float]
    quantiles: Union[Dict[float, float], Undefined]
    n_matched: int
    n: int

    @property
    def status(self) -> str:
        return "undefined" if self.n_matched == 0 else "ok"

    def to_dict(self) -> dict[str, object]:
        def value(v: Evaluation) -> Optional[float]:
            return None if isinstance(v, Undefined) else v

        return {
            "status": self.status,
            "n": self.n,
            "n_matched": self.n_matched,
            "empirical_value": value(self.empirical_value),
            "empirical_cde": value(self.empirical_cde),
            "misclassification": self.misclassification,
            "quantiles": None
            if isinstance(self.quantiles, Undefined)
            else {str(k): v for k, v in self.quantiles.items()},
        }


def evaluate(
    rule: DecisionRule,
    alloc: AllocParams,
    u: UtilitySpec,
    data: Dataset,
    truth: Optional[DecisionRule] = None,
    probs: Sequence[float] = (0.25, 0.5),
) -> EvalReport:
    return EvalReport(
        empirical_value=empirical_value(rule, data),
        empirical_cde=empirical_cde(rule, alloc, u, data),
        misclassification=None if truth is None else misclassification(rule, truth, data.x),
        quantiles=matched_quantiles(rule, data, probs),
        n_matched=int(_matched(rule, data).sum()),
        n=data.n,
    )


def default_grid() -> List[Tuple[float, float]]:
    """Every pair of penalty weights from ``{0, 1e-3, 1e-2, 1e-1, 1}``."""
    return list(itertools.product(DEFAULT_GRID, DEFAULT_GRID))


@dataclass(frozen=True)
class FoldScore:
    lam_alloc: float
    lam_rule: float
    fold: int
    ocde: Evaluation


@dataclass
class CVResult:
    best: Tuple[float, float]
    table: List[FoldScore]
    #: mean held-out criterion per grid point, -inf if any fold was undefined
    scores: Dict[Tuple[float, float], float]
    fitted: Optional[FittedIDR]


def _fold_score(
    template: FitSpec,
    lam: Tuple[float, float],
    fold: int,
    test_idx: npt.NDArray[np.intp],
) -> FoldScore:
    data = template.data
    train_idx = np.setdiff1d(np.arange(data.n), test_idx, assume_unique=True)
    spec = template.replace(
        data=data.subset(train_idx), lam_alloc=lam[0], lam_rule=lam[1], certify=False
    )
    fitted = fit(spec)
    score = empirical_cde(fitted.rule, fitted.alloc, template.utility, data.subset(test_idx))
    logger.debug("lambda=%s fold %d: %s", lam, fold, score)
    return FoldScore(lam[0], lam[1], fold, score)


def cross_validate(
    template: FitSpec,
    grid: Optional[Sequence[Tuple[float, float]]] = None,
    k: int = 10,
    seed: int = 0,
    *,
    jobs: int = 1,
    refit: bool = True,
) -> CVResult:
    """``k``-fold cross-validation of ``(lam_alloc, lam_rule)`` over
    ``grid``, maximising the mean held-out empirical CDE.

    Folds are drawn from ``seed``. Ties between grid points go to the
    lexicographically smaller pair. The winner is refitted on all the
    data of ``template`` unless ``refit`` is false.
    """
    points = sorted(
        {(float(a), float(r)) for a, r in (default_grid() if grid is None else grid)}
    )
    if not points:
        raise ConfigError("empty penalty grid")
    if not 2 <= k <= template.data.n:
        raise ConfigError(f"need 2 <= k <= n, got k={k} for n={template.data.n}")
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    folds = kfold(template.data.n, k, rng_for(seed))
    tasks = [(lam, f, idx) for lam in points for f, idx in enumerate(folds)]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            table = list(ex.map(lambda t: _fold_score(template, *t), tasks))
    else:
        table = [_fold_score(template, *t) for t in tasks]

    scores: Dict[Tuple[float, float], float] = {}
    for lam in points:
        rows = [r.ocde for r in table if (r.lam_alloc, r.lam_rule) == lam]
        scores[lam] = (
            -math.inf
            if any(isinstance(r, Undefined) for r in rows)
            else math.fsum(rows) / len(rows)  # type: ignore[arg-type]
        )
        logger.info("lambda=(%g, %g): mean held-out CDE %.6g", *lam, scores[lam])

    best = points[0]
    for lam in points[1:]:
        if scores[lam] > scores[best]:
            best = lam
    fitted = (
        fit(template.replace(lam_alloc=best[0], lam_rule=best[1])) if refit else None
    )
    return CVResult(best, table, scores, fitted)


def write_fold_table(table: Sequence[FoldScore], fp: IO[str]) -> None:
    """CSV with header ``lambda_alloc,lambda_rule,fold,ocde``; undefined
    folds are written as ``undefined``.
    """
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["lambda_alloc", "lambda_rule", "fold", "ocde"])
    for r in table:
        w.writerow(
            [
                repr(r.lam_alloc),
                repr(r.lam_rule),
                r.fold,
                "undefined" if isinstance(r.ocde, Undefined) else repr(r.ocde),
            ]
        )
