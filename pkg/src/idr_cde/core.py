"""Domain types shared by every module: datasets, utilities, decision
rules and allocation functions.

All records are immutable after construction and can be freely shared
between threads.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Protocol, Union

import numpy as np
import numpy.typing as npt

__all__ = [
    "DEFAULT_BOX",
    "AllocParams",
    "ConfigError",
    "DataError",
    "Dataset",
    "DecisionRule",
    "InfeasibleError",
    "LinearRule",
    "QPFailure",
    "RuleParams",
    "SolverError",
    "UtilityKind",
    "UtilitySpec",
    "decide",
    "utility_eval",
    "validate_dataset",
]

FloatArray = npt.NDArray[np.float64]
ArrayLike = Union[float, npt.ArrayLike]

#: default half-width of the parameter box ``[-B, B]``
DEFAULT_BOX = 1e3


class DataError(ValueError):
    """Invalid dataset, malformed data file or schema mismatch."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class SolverError(RuntimeError):
    """Numerical failure of one of the solvers."""


class InfeasibleError(SolverError):
    """The problem (or the provided starting point) is infeasible."""


class QPFailure(SolverError):
    """The QP solver did not reach the requested tolerance."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observational (or randomised) samples ``(X, A, Z, π(A|X))``.

    The constructor only checks shapes, the value invariants are
    reported by :func:`validate_dataset` (or enforced by
    :meth:`checked`).
    """

    __slots__ = ("a", "propensity", "x", "z")
    x: FloatArray
    a: FloatArray
    z: FloatArray
    propensity: FloatArray

    def __init__(
        self,
        x: npt.ArrayLike,
        a: npt.ArrayLike,
        z: npt.ArrayLike,
        propensity: Optional[npt.ArrayLike] = None,
    ) -> None:
        xs = np.array(x, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        if xs.ndim != 2:
            raise DataError(f"covariates must be a matrix, got {xs.ndim} dimensions")
        n = xs.shape[0]
        as_ = np.array(a, dtype=float).reshape(-1)
        zs = np.array(z, dtype=float).reshape(-1)
        ps = (
            np.full(n, 0.5)
            if propensity is None
            else np.array(propensity, dtype=float).reshape(-1)
        )
        for name, v in (("actions", as_), ("outcomes", zs), ("propensities", ps)):
            if v.shape != (n,):
                raise DataError(f"{name} must have {n} entries, got {v.shape[0]}")
        for v in (xs, as_, zs, ps):
            v.setflags(write=False)
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "a", as_)
        object.__setattr__(self, "z", zs)
        object.__setattr__(self, "propensity", ps)

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    def __len__(self) -> int:
        return self.n

    def subset(self, idx: npt.ArrayLike) -> Dataset:
        """Returns the dataset restricted to the rows ``idx``."""
        i = np.asarray(idx)
        return Dataset(self.x[i], self.a[i], self.z[i], self.propensity[i])

    def checked(self) -> Dataset:
        """Returns ``self``.

        :raises DataError: listing every invariant violation
        """
        if violations := validate_dataset(self):
            raise DataError("; ".join(violations))
        return self


def validate_dataset(d: Dataset) -> List[str]:
    """Returns every invariant violation of ``d``, with (1-based) row
    indices. An empty list means the dataset is valid.
    """
    violations: List[str] = []
    if d.n < 1:
        violations.append("dataset has no samples")
    if d.p < 1:
        violations.append("dataset has no covariates")

    for r, c in zip(*np.nonzero(~np.isfinite(d.x))):
        violations.append(f"non-finite covariate, row {r + 1}, column x{c + 1}")
    for name, v in (("action", d.a), ("outcome", d.z), ("propensity", d.propensity)):
        for r in np.flatnonzero(~np.isfinite(v)):
            violations.append(f"non-finite {name}, row {r + 1}")

    for r in np.flatnonzero(np.isfinite(d.a) & (np.abs(d.a) != 1.0)):
        violations.append(f"action not in {{-1, +1}}, row {r + 1}")
    for r in np.flatnonzero(d.propensity <= 0):
        violations.append(f"nonpositive propensity, row {r + 1}")
    for r in np.flatnonzero(d.propensity > 1):
        violations.append(f"propensity above 1, row {r + 1}")
    return violations


UtilityKind = Literal["identity", "piecewise_linear", "truncated_quadratic"]


@dataclass(frozen=True)
class UtilitySpec:
    """Utility function ``u`` of the OCE family: concave, nondecreasing,
    ``u(0) = 0`` and ``u(t) <= t``.

    - ``identity``: ``u(t) = t``
    - ``piecewise_linear``: ``u(t) = xi1 max(0, t) - xi2 max(0, -t)`` with
      ``0 <= xi1 < 1 < xi2``
    - ``truncated_quadratic``: ``u(t) = t - t^2 / (2 tau)`` for ``t <= tau``
      and ``tau / 2`` beyond
    """

    kind: UtilityKind = "identity"
    xi1: float = 0.0
    xi2: float = 2.0
    tau: float = 1.0

    def __post_init__(self) -> None:
        if self.kind == "piecewise_linear":
            if not (0 <= self.xi1 < 1 < self.xi2) or not math.isfinite(self.xi2):
                raise ConfigError(
                    f"piecewise linear utility requires 0 <= xi1 < 1 < xi2, "
                    f"got xi1={self.xi1}, xi2={self.xi2}"
                )
        elif self.kind == "truncated_quadratic":
            if not (0 < self.tau < math.inf):
                raise ConfigError(f"tau must be positive, got {self.tau}")
        elif self.kind != "identity":
            raise ConfigError(f"unknown utility kind {self.kind!r}")

    @classmethod
    def identity(cls) -> UtilitySpec:
        return cls("identity")

    @classmethod
    def piecewise_linear(cls, xi1: float, xi2: float) -> UtilitySpec:
        return cls("piecewise_linear", xi1=xi1, xi2=xi2)

    @classmethod
    def truncated_quadratic(cls, tau: float) -> UtilitySpec:
        return cls("truncated_quadratic", tau=tau)

    @classmethod
    def cvar(cls, gamma: float) -> UtilitySpec:
        """Utility whose OCE is the lower ``gamma``-tail CVaR."""
        if not 0 < gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
        return cls("piecewise_linear", xi1=0.0, xi2=1.0 / gamma)

    def __call__(self, t: ArrayLike) -> FloatArray:
        tt = np.asarray(t, dtype=float)
        if self.kind == "identity":
            return tt.copy()
        if self.kind == "piecewise_linear":
            return self.xi1 * np.maximum(tt, 0.0) - self.xi2 * np.maximum(-tt, 0.0)
        return np.where(
            tt <= self.tau,
            tt - np.square(np.minimum(tt, self.tau)) / (2 * self.tau),
            self.tau / 2,
        )

    def check(self, samples: Optional[npt.ArrayLike] = None) -> List[str]:
        """Checks the utility axioms on sample points, returning the
        violated properties (empty if none).
        """
        ts = np.sort(
            np.asarray(
                np.linspace(-50.0, 50.0, 2001) if samples is None else samples,
                dtype=float,
            ).reshape(-1)
        )
        us = self(ts)
        problems = []
        if float(self(0.0)) != 0.0:
            problems.append("u(0) != 0")
        if np.any(np.diff(us) < -1e-12):
            problems.append("u is not nondecreasing")
        if np.any(us > ts + 1e-12):
            problems.append("u(t) > t")
        return problems

    def to_dict(self) -> dict[str, object]:
        if self.kind == "piecewise_linear":
            return {"kind": self.kind, "xi1": self.xi1, "xi2": self.xi2}
        if self.kind == "truncated_quadratic":
            return {"kind": self.kind, "tau": self.tau}
        return {"kind": self.kind}


def utility_eval(u: UtilitySpec, t: float) -> float:
    """Scalar evaluation of ``u`` at ``t``."""
    return float(u(t))


class DecisionRule(Protocol):
    """DecisionRule()

    A decision rule maps covariate vectors to actions in ``{-1, +1}``.
    Called with a ``(n, p)`` matrix it returns the ``n`` actions, with a
    single ``p``-vector it returns an array of one action.
    """

    @abc.abstractmethod
    def __call__(self, x: npt.ArrayLike, /) -> FloatArray:
        """Decides the action(s) for ``x``."""
        ...


@dataclass(frozen=True, eq=False)
class LinearRule:
    """Linear decision rule ``sign(beta^T x + intercept)``, zero margins
    deciding ``+1``.
    """

    __slots__ = ("beta", "intercept")
    beta: FloatArray
    intercept: float

    def __init__(self, beta: npt.ArrayLike, intercept: float) -> None:
        b = np.array(beta, dtype=float).reshape(-1)
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "intercept", float(intercept))

    def margin(self, x: npt.ArrayLike) -> FloatArray:
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        if xs.shape[1] != self.beta.shape[0]:
            raise ValueError(
                f"rule has {self.beta.shape[0]} coefficients, "
                f"covariates have {xs.shape[1]} columns"
            )
        return np.asarray(xs @ self.beta + self.intercept, dtype=float)

    def __call__(self, x: npt.ArrayLike, /) -> FloatArray:
        return np.where(self.margin(x) >= 0, 1.0, -1.0)

    def scaled(self, factor: float) -> LinearRule:
        return LinearRule(self.beta * factor, self.intercept * factor)


class RuleParams(LinearRule):
    """Fitted rule parameters ``theta = (beta, beta0)`` whose bias is
    fixed to exactly ``+1`` or ``-1``.
    """

    __slots__ = ()

    def __init__(self, beta: npt.ArrayLike, bias: float) -> None:
        if bias not in (-1.0, 1.0):
            raise ValueError(f"rule bias must be +1 or -1, got {bias}")
        super().__init__(beta, bias)

    @property
    def bias(self) -> int:
        return int(self.intercept)


def decide(theta: LinearRule, x: npt.ArrayLike) -> int:
    """Action of the rule ``theta`` at the single covariate vector ``x``."""
    xs = np.asarray(x, dtype=float)
    if xs.ndim != 1:
        raise ValueError("decide takes a single covariate vector")
    return int(theta(xs)[0])


@dataclass(frozen=True, eq=False)
class AllocParams:
    """Affine allocation function ``alpha(x) = b^T x + b0``, optionally
    confined to the box ``[-bound, bound]^(p+1)``.
    """

    __slots__ = ("b", "b0", "bound")
    b: FloatArray
    b0: float
    bound: Optional[float]

    def __init__(
        self, b: npt.ArrayLike, b0: float, bound: Optional[float] = None
    ) -> None:
        bs = np.array(b, dtype=float).reshape(-1)
        bs.setflags(write=False)
        if bound is not None and (
            np.any(np.abs(bs) > bound) or abs(b0) > bound
        ):
            raise ValueError(f"allocation parameters outside the box [-{bound}, {bound}]")
        object.__setattr__(self, "b", bs)
        object.__setattr__(self, "b0", float(b0))
        object.__setattr__(self, "bound", bound)

    def __call__(self, x: npt.ArrayLike) -> FloatArray:
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(xs @ self.b + self.b0, dtype=float)
