"""Regression based baselines: ``l1`` penalised least squares on the
(covariate, action, interaction) design, and DLearn, a weighted
penalised regression of ``Z A`` on the covariates. Both are fitted by
cyclic coordinate descent.
"""

from __future__ import annotations

__all__ = [
    "DEFAULT_GRID",
    "dlearn_design",
    "fit_dlearn",
    "fit_l1pls",
    "fit_penalized_ls",
    "l1pls_design",
    "select_lambda",
]

import logging
import warnings
from typing import Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .core import Dataset, LinearRule
from .utils import kfold

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

DEFAULT_GRID: Tuple[float, ...] = (0.0, 1e-3, 1e-2, 1e-1, 1.0)


def _soft(v: float, lam: float) -> float:
    return float(np.sign(v) * max(abs(v) - lam, 0.0))


def fit_penalized_ls(
    design: npt.ArrayLike,
    response: npt.ArrayLike,
    weights: Optional[npt.ArrayLike] = None,
    lam: float = 0.0,
    mask: Optional[npt.ArrayLike] = None,
    *,
    tol: float = 1e-8,
    max_sweeps: int = 10_000,
) -> FloatArray:
    """Minimises ``1/(2n) sum_i w_i (y_i - c . d_i)^2 + lam sum_{j in mask} |c_j|``
    by cyclic coordinate descent, until the subgradient optimality
    conditions hold to ``tol``.

    Penalised columns with zero variance are dropped (their coefficient
    is fixed to 0) with a :class:`RuntimeWarning`.

    :param mask: which coefficients are penalised, all by default
    """
    d = np.atleast_2d(np.asarray(design, dtype=float))
    y = np.asarray(response, dtype=float).reshape(-1)
    n, k = d.shape
    if y.shape != (n,):
        raise ValueError(f"design has {n} rows but the response {y.shape[0]} entries")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("weights must be nonnegative with one entry per row")
    pen = np.ones(k, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if pen.shape != (k,):
        raise ValueError(f"mask must have {k} entries")
    if lam < 0:
        raise ValueError("lam must be nonnegative")

    denom = (w @ (d * d)) / n
    active = denom > 0
    flat = pen & (np.ptp(d, axis=0) == 0) if n > 1 else np.zeros(k, dtype=bool)
    for j in np.flatnonzero(flat & active):
        warnings.warn(
            f"penalised column {j} has zero variance and is dropped",
            RuntimeWarning,
            stacklevel=2,
        )
    active &= ~flat

    c = np.zeros(k)
    r = y.copy()
    for sweep in range(1, max_sweeps + 1):
        for j in np.flatnonzero(active):
            col = d[:, j]
            rho = float((w * col) @ r) / n + denom[j] * c[j]
            new = (_soft(rho, lam) if pen[j] else rho) / denom[j]
            if new != c[j]:
                r -= col * (new - c[j])
                c[j] = new
        grad = -(d.T @ (w * r)) / n
        viol = np.where(
            ~pen,
            np.abs(grad),
            np.where(c != 0, np.abs(grad + lam * np.sign(c)), np.maximum(np.abs(grad) - lam, 0.0)),
        )
        if float(viol[active].max(initial=0.0)) <= tol:
            break
    else:
        logger.warning("coordinate descent stopped after %d sweeps", max_sweeps)
    return c


def l1pls_design(x: npt.ArrayLike, a: npt.ArrayLike) -> FloatArray:
    """Columns ``(1, X, A, X A)``."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    av = np.asarray(a, dtype=float).reshape(-1, 1)
    return np.hstack([np.ones_like(av), xs, av, xs * av])


def dlearn_design(x: npt.ArrayLike) -> FloatArray:
    """Columns ``(X, 1)``."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    return np.hstack([xs, np.ones((xs.shape[0], 1))])


def _l1pls_problem(data: Dataset) -> Tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    design = l1pls_design(data.x, data.a)
    mask = np.ones(design.shape[1], dtype=bool)
    mask[0] = False
    return design, data.z, np.ones(data.n), mask


def _dlearn_problem(data: Dataset) -> Tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    design = dlearn_design(data.x)
    mask = np.ones(design.shape[1], dtype=bool)
    mask[-1] = False
    return design, data.z * data.a, 1.0 / data.propensity, mask


def fit_l1pls(data: Dataset, lam: float) -> LinearRule:
    """Rule choosing the action with the larger fitted outcome: the
    fitted difference between ``+1`` and ``-1`` is
    ``2 (c_A + x . c_XA)``.
    """
    design, y, w, mask = _l1pls_problem(data)
    c = fit_penalized_ls(design, y, w, lam, mask)
    p = data.p
    return LinearRule(c[p + 2 :], c[p + 1])


def fit_dlearn(data: Dataset, lam: float) -> LinearRule:
    """``sign(theta . (x, 1))`` with ``theta`` regressing ``Z A`` on
    ``(X, 1)`` with weights ``1 / pi``.
    """
    design, y, w, mask = _dlearn_problem(data)
    theta = fit_penalized_ls(design, y, w, lam, mask)
    return LinearRule(theta[:-1], theta[-1])


def select_lambda(
    method: str,
    data: Dataset,
    grid: Sequence[float] = DEFAULT_GRID,
    k: int = 10,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Penalty of ``grid`` with the smallest ``k``-fold cross-validated
    (weighted) squared prediction error of the baseline ``method``
    (``"l1pls"`` or ``"dlearn"``), ties going to the smaller penalty.
    """
    if not grid:
        raise ValueError("empty penalty grid")
    if method == "l1pls":
        design, y, w, mask = _l1pls_problem(data)
    elif method == "dlearn":
        design, y, w, mask = _dlearn_problem(data)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    folds = kfold(data.n, min(k, data.n), rng or np.random.default_rng(0))
    best, best_err = None, np.inf
    for lam in sorted(grid):
        err = 0.0
        for test in folds:
            train = np.setdiff1d(np.arange(data.n), test, assume_unique=True)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                c = fit_penalized_ls(design[train], y[train], w[train], lam, mask)
            err += float(w[test] @ np.square(y[test] - design[test] @ c))
        if err < best_err:
            best, best_err = lam, err
    assert best is not None
    return best
