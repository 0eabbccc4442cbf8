"""Empirical optimized certainty equivalents.

Calculators for the OCE ``sup_eta [eta + E u(Z - eta)]`` of a finite
(weighted) sample, its CVaR, quantile and mean-variance special cases,
and the explicit optimal action of the decomposable case, which picks
the action with the larger conditional OCE.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Tuple

import numpy as np
import numpy.typing as npt
from scipy.optimize import brentq

from .core import ConfigError, UtilitySpec

__all__ = [
    "OCEResult",
    "SampleSet",
    "cvar_level",
    "empirical_cvar",
    "empirical_oce",
    "empirical_quantile",
    "explicit_optimal_action",
    "mean_variance_oce",
    "piecewise_linear_oce",
]


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Finite outcome distribution: ``values`` with probability
    ``weights`` (uniform by default, normalised to sum to 1).
    """

    __slots__ = ("values", "weights")
    values: npt.NDArray[np.float64]
    weights: npt.NDArray[np.float64]

    def __init__(
        self, values: npt.ArrayLike, weights: Optional[npt.ArrayLike] = None
    ) -> None:
        v = np.array(values, dtype=float).reshape(-1)
        if v.size == 0:
            raise ValueError("sample set is empty")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample values must be finite")
        if weights is None:
            w = np.full(v.size, 1.0 / v.size)
        else:
            w = np.array(weights, dtype=float).reshape(-1)
            if w.shape != v.shape:
                raise ValueError("weights and values have different lengths")
            if not np.all((w > 0) & np.isfinite(w)):
                raise ValueError("weights must be positive")
            w = w / w.sum()
        order = np.argsort(v, kind="stable")
        v, w = v[order], w[order]
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return int(self.values.size)

    def __add__(self, k: float) -> SampleSet:
        return SampleSet(self.values + k, self.weights)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.values)

    @property
    def variance(self) -> float:
        """Population (plug-in) variance."""
        return float(self.weights @ np.square(self.values - self.mean))


class OCEResult(NamedTuple):
    value: float
    eta: float


def _check_level(gamma: float) -> None:
    if not 0 < gamma < 1:
        raise ValueError(f"level must lie in (0, 1), got {gamma}")


def empirical_quantile(s: SampleSet, gamma: float) -> float:
    """Left-continuous generalised inverse: the smallest sample value
    whose cumulative weight reaches ``gamma``.
    """
    _check_level(gamma)
    cum = np.cumsum(s.weights)
    idx = int(np.searchsorted(cum, gamma - 1e-12, side="left"))
    return float(s.values[min(idx, len(s) - 1)])


def empirical_cvar(s: SampleSet, gamma: float) -> float:
    """Lower-tail conditional value-at-risk
    ``sup_eta [eta - E(eta - Z)_+ / gamma]``, attained at the
    ``gamma``-quantile.
    """
    q = empirical_quantile(s, gamma)
    return float(q - (s.weights @ np.maximum(q - s.values, 0.0)) / gamma)


def _piecewise_objective(
    s: SampleSet, xi1: float, xi2: float
) -> npt.NDArray[np.float64]:
    # objective at eta = values[k], from cumulative sums over the sorted
    # sample (entries equal to eta contribute nothing to either tail)
    v, w = s.values, s.weights
    cw = np.cumsum(w)
    cwz = np.cumsum(w * v)
    below = v * cw - cwz
    above = (cwz[-1] - cwz) - v * (1.0 - cw)
    return np.asarray(
        v + xi1 * np.maximum(above, 0.0) - xi2 * np.maximum(below, 0.0),
        dtype=float,
    )


def empirical_oce(
    s: SampleSet,
    u: UtilitySpec,
    eta_bounds: Optional[Tuple[float, float]] = None,
) -> OCEResult:
    """``max_eta eta + sum_i w_i u(z_i - eta)`` and its smallest maximiser
    over ``eta_bounds`` (default: the sample range, which must be
    contained in the bounds).

    Piecewise-linear utilities are solved exactly over the sample
    points (the objective is concave piecewise linear with breakpoints
    there), the truncated quadratic by root-finding on the monotone
    derivative.
    """
    lo, hi = float(s.values[0]), float(s.values[-1])
    if eta_bounds is not None:
        blo, bhi = eta_bounds
        if not (blo <= lo and hi <= bhi):
            raise ValueError(
                f"eta bounds [{blo}, {bhi}] do not contain the sample range [{lo}, {hi}]"
            )
        lo, hi = float(blo), float(bhi)

    if u.kind == "identity":
        return OCEResult(s.mean, lo)

    if u.kind == "piecewise_linear":
        obj = _piecewise_objective(s, u.xi1, u.xi2)
        best = float(obj.max())
        k = int(np.flatnonzero(obj >= best - 1e-12 * (1.0 + abs(best)))[0])
        return OCEResult(float(obj[k]), float(s.values[k]))

    tau = u.tau

    def slope(eta: float) -> float:
        return float(
            1.0 - s.weights @ np.maximum(0.0, 1.0 - (s.values - eta) / tau)
        )

    if slope(lo) <= 0:
        eta = lo
    elif slope(hi) >= 0:
        eta = hi
    else:
        eta = float(brentq(slope, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))
    return OCEResult(float(eta + s.weights @ u(s.values - eta)), eta)


def cvar_level(u: UtilitySpec) -> float:
    """Tail level ``gamma = (1 - xi1) / (xi2 - xi1)`` of a piecewise-linear
    utility.
    """
    if u.kind != "piecewise_linear":
        raise ConfigError("only piecewise linear utilities have a CVaR level")
    return (1.0 - u.xi1) / (u.xi2 - u.xi1)


def piecewise_linear_oce(s: SampleSet, u: UtilitySpec) -> float:
    """Closed form ``xi1 E[Z] + (1 - xi1) CVaR_gamma(Z)`` of the
    piecewise-linear OCE.
    """
    return u.xi1 * s.mean + (1.0 - u.xi1) * empirical_cvar(s, cvar_level(u))


def mean_variance_oce(s: SampleSet, tau: float) -> float:
    """``mean - var / (2 tau)``, the OCE under the truncated quadratic
    utility when ``tau`` is at least the sample range.
    """
    spread = float(s.values[-1] - s.values[0])
    if not tau > 0 or tau < spread * (1 - 1e-12):
        raise ValueError(f"tau={tau} is smaller than the sample range {spread}")
    return s.mean - s.variance / (2.0 * tau)


def explicit_optimal_action(
    per_action: Mapping[int, SampleSet], u: UtilitySpec
) -> int:
    """Action with the larger conditional OCE, ties going to ``+1``."""
    missing = {1, -1} - set(per_action)
    if missing:
        raise ValueError(f"missing samples for action(s) {sorted(missing)}")
    plus = empirical_oce(per_action[1], u).value
    minus = empirical_oce(per_action[-1], u).value
    return 1 if plus >= minus else -1
