"""Estimation of linear decision rules maximising the empirical
decision-rule based covariate-dependent equivalent.

With a piecewise-linear utility the empirical problem reads

    min  penalties + (1/N) sum_i (Z-_i + a_i) 1(s_i > 0) / pi_i
                   - (1/|N+|) sum_{j in N+} Z+_j 1(s_j >= 0) / pi_j

over the rule slope ``beta`` and the allocation ``w = (b, b0)``, where
``s_i = A_i (beta . X_i + bias)``, ``t_i = Z_i - w . (X_i, 1)``,
``a_i = t_i - u(t_i)`` and ``N+`` holds the samples with a positive
outcome. The indicators are replaced by epigraph (resp. hypograph)
variables ``sigma-`` (resp. ``sigma+``) constrained by piecewise-affine
DC constraints, and the products ``a_i sigma-_i`` by
``((a_i + sigma-_i)^2 - sigma-_i^2 - a_i^2) / 2``, which gives a
reverse-convex constrained DC program. The bias is fixed to ``+1`` and
``-1`` in turn and the better of the two runs is kept.
"""

from __future__ import annotations

__all__ = [
    "BiasRun",
    "ConvexObjective",
    "EmpiricalProblem",
    "FitSpec",
    "FittedIDR",
    "SmoothObjective",
    "build_program",
    "dlearn_start",
    "fit",
    "initial_point",
    "objective_direct",
    "recover_sigma",
    "weighted_start",
]

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Literal, Optional, Tuple

import numpy as np
import numpy.typing as npt
from scipy.optimize import minimize
from scipy.special import expit

from .core import (
    DEFAULT_BOX,
    AllocParams,
    ConfigError,
    Dataset,
    LinearRule,
    RuleParams,
    UtilitySpec,
)
from .dca import (
    EPS_FEAS,
    EPS_OBJ,
    EPS_STEP,
    EPS_TIE,
    MAX_ITER,
    Certificate,
    Polyhedron,
    ReverseConvexDCProgram,
    SolverTrace,
    check_a_stationarity,
    solve,
)
from .epigraph import (
    MaxAffineConstraint,
    epigraph_constraint,
    expand_to_reverse_convex,
    hypograph_constraint,
)
from .oce import SampleSet, empirical_oce
from .qp import ConvexQP, Layout, SplitIngredients, consistent_split, split_variables

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
Surrogate = Literal["plain_l1", "mcp_like"]
WarmStart = Literal["zeros", "dlearn", "weighted"]

#: ridge of the weighted logistic warm start
START_RIDGE = 1e-2
#: objective margin below which the +1 run is kept
TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FitSpec:
    """Data, utility, penalties and solver settings of a fit.

    :param phi_alloc: per-coefficient weights of the allocation penalty
        (all ones by default)
    :param phi_rule: same for the rule penalty
    :param surrogate: smooth part subtracted from the ``l1`` penalties,
        ``plain_l1`` (none) or ``mcp_like``
    :param box: half-width of the box on ``(b, b0, beta)``
    :param prox: proximal weight of the DC steps
    :param eps_obj: objective stopping threshold of the DC runs, see
        :func:`~idr_cde.dca.solve` (``None`` disables it)
    :param beta_init: starting rule slope, overrides ``warm_start``
    """

    data: Dataset
    utility: UtilitySpec = UtilitySpec.piecewise_linear(0.0, 2.0)
    lam_alloc: float = 0.0
    lam_rule: float = 0.0
    phi_alloc: Optional[FloatArray] = None
    phi_rule: Optional[FloatArray] = None
    surrogate: Surrogate = "plain_l1"
    mcp_a: float = 3.0
    box: float = DEFAULT_BOX
    prox: float = 1e-2
    eps_step: float = EPS_STEP
    eps_obj: Optional[float] = EPS_OBJ
    max_iter: int = MAX_ITER
    eps_tie: float = EPS_TIE
    eps_feas: float = EPS_FEAS
    qp_tol: float = 1e-8
    beta_init: Optional[FloatArray] = None
    warm_start: WarmStart = "weighted"
    certify: bool = True

    def __post_init__(self) -> None:
        self.data.checked()
        p = self.data.p
        if self.utility.kind != "piecewise_linear":
            raise ConfigError(
                f"fitting requires a piecewise linear utility, got {self.utility.kind}"
            )
        for name in ("lam_alloc", "lam_rule"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("phi_alloc", "phi_rule", "beta_init"):
            v = getattr(self, name)
            if v is None:
                continue
            arr = np.array(v, dtype=float).reshape(-1)
            if arr.shape != (p,):
                raise ConfigError(f"{name} must have {p} entries, got {arr.shape[0]}")
            if name != "beta_init" and not np.all(arr > 0):
                raise ConfigError(f"{name} must be positive")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if self.surrogate not in ("plain_l1", "mcp_like"):
            raise ConfigError(f"unknown surrogate {self.surrogate!r}")
        if self.warm_start not in ("zeros", "dlearn", "weighted"):
            raise ConfigError(f"unknown warm start {self.warm_start!r}")
        if not self.mcp_a > 0:
            raise ConfigError("mcp_a must be positive")
        if not self.box > 0:
            raise ConfigError("box must be positive")
        if not self.prox > 0:
            raise ConfigError("prox must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.eps_obj is not None and not self.eps_obj >= 0:
            raise ConfigError("eps_obj must be nonnegative")

    def replace(self, **changes: object) -> FitSpec:
        return dataclasses.replace(self, **changes)  # type: ignore[arg-type]

    def weights(self) -> Tuple[FloatArray, FloatArray]:
        ones = np.ones(self.data.p)
        return (
            ones if self.phi_alloc is None else self.phi_alloc,
            ones if self.phi_rule is None else self.phi_rule,
        )


def _surrogate(
    x: FloatArray, lam: float, phi: FloatArray, kind: Surrogate, a: float
) -> Tuple[float, FloatArray]:
    """Value and gradient of the smooth convex part ``rho`` subtracted
    from ``lam phi |x|``.
    """
    if kind == "plain_l1" or lam == 0:
        return 0.0, np.zeros_like(x)
    lp = lam * phi
    inner = np.abs(x) <= a * lp
    value = np.where(inner, x * x / (2 * a), lp * np.abs(x) - a * lp * lp / 2)
    grad = np.where(inner, x / a, lp * np.sign(x))
    return float(value.sum()), grad


@dataclass(frozen=True, eq=False)
class EmpiricalProblem:
    """The empirical problem of ``spec`` with the rule bias fixed to
    ``bias``, and the evaluation of its objective pieces.
    """

    spec: FitSpec
    bias: int

    def __post_init__(self) -> None:
        if self.bias not in (-1, 1):
            raise ValueError(f"bias must be +1 or -1, got {self.bias}")

    @cached_property
    def xhat(self) -> FloatArray:
        d = self.spec.data
        return np.hstack([d.x, np.ones((d.n, 1))])

    @cached_property
    def plus_index(self) -> npt.NDArray[np.intp]:
        return np.flatnonzero(self.spec.data.z > 0)

    @property
    def layout(self) -> Layout:
        d = self.spec.data
        return Layout(d.p, d.n, int(self.plus_index.size))

    @cached_property
    def ingredients(self) -> SplitIngredients:
        d, s = self.spec.data, self.spec
        phi_alloc, phi_rule = s.weights()
        return SplitIngredients(
            xhat=self.xhat,
            z=d.z,
            propensity=d.propensity,
            xi1=s.utility.xi1,
            xi2=s.utility.xi2,
            plus_index=self.plus_index,
            lam_alloc=s.lam_alloc,
            lam_rule=s.lam_rule,
            phi_alloc=phi_alloc,
            phi_rule=phi_rule,
        )

    def margins(self, beta: FloatArray) -> FloatArray:
        """Functional margins ``s_i = A_i (beta . X_i + bias)``."""
        d = self.spec.data
        return np.asarray(d.a * (d.x @ beta + self.bias))

    def residuals(self, w: FloatArray) -> FloatArray:
        """``t_i = Z_i - w . (X_i, 1)``."""
        return np.asarray(self.spec.data.z - self.xhat @ w)

    def bracket(self, t: FloatArray) -> FloatArray:
        """``a_i = t_i - u(t_i)``."""
        u = self.spec.utility
        return np.asarray(
            (1 - u.xi1) * np.maximum(t, 0.0) + (u.xi2 - 1) * np.maximum(-t, 0.0)
        )

    @cached_property
    def _scale(self) -> FloatArray:
        d = self.spec.data
        return np.asarray(1.0 / (d.n * d.propensity))

    @cached_property
    def _plus_scale(self) -> FloatArray:
        d, idx = self.spec.data, self.plus_index
        if not idx.size:
            return np.zeros(0)
        return np.asarray(np.maximum(d.z[idx], 0.0) / (idx.size * d.propensity[idx]))

    def penalty(self, z: FloatArray) -> float:
        lay, s = self.layout, self.spec
        phi_alloc, phi_rule = s.weights()
        return float(
            s.lam_alloc * phi_alloc @ np.abs(z[lay.b])
            + s.lam_rule * phi_rule @ np.abs(z[lay.beta])
        )

    def surrogate(self, z: FloatArray) -> Tuple[float, FloatArray]:
        lay, s = self.layout, self.spec
        phi_alloc, phi_rule = s.weights()
        va, ga = _surrogate(z[lay.b], s.lam_alloc, phi_alloc, s.surrogate, s.mcp_a)
        vr, gr = _surrogate(z[lay.beta], s.lam_rule, phi_rule, s.surrogate, s.mcp_a)
        grad = np.zeros(lay.size)
        grad[lay.b] = ga
        grad[lay.beta] = gr
        return va + vr, grad

    def convex_value(self, z: FloatArray) -> float:
        lay = self.layout
        d = self.spec.data
        sm, sp_ = z[lay.sigma_minus], z[lay.sigma_plus]
        a = self.bracket(self.residuals(z[lay.w]))
        return float(
            self.penalty(z)
            + self._scale @ (np.maximum(-d.z, 0.0) * sm)
            - self._plus_scale @ sp_
            + 0.5 * self._scale @ np.square(a + sm)
        )

    def smooth_value(self, z: FloatArray) -> float:
        lay = self.layout
        sm = z[lay.sigma_minus]
        a = self.bracket(self.residuals(z[lay.w]))
        return float(self.surrogate(z)[0] + 0.5 * self._scale @ (sm * sm + a * a))

    def smooth_gradient(self, z: FloatArray) -> FloatArray:
        lay, u = self.layout, self.spec.utility
        grad = self.surrogate(z)[1]
        t = self.residuals(z[lay.w])
        # d(a^2)/dt, zero at the kink t = 0 from both sides
        da2 = 2 * (1 - u.xi1) ** 2 * np.maximum(t, 0.0) - 2 * (u.xi2 - 1) ** 2 * np.maximum(-t, 0.0)
        grad[lay.w] -= self.xhat.T @ (0.5 * self._scale * da2)
        grad[lay.sigma_minus] += self._scale * z[lay.sigma_minus]
        return grad

    def constraints(self) -> list[MaxAffineConstraint]:
        """Expanded epigraph constraints, one pair per sample, then the
        hypograph pairs of the positive-outcome samples.
        """
        lay, d = self.layout, self.spec.data
        epi = expand_to_reverse_convex(epigraph_constraint())
        hypo = expand_to_reverse_convex(hypograph_constraint())
        out = []
        for graph, rows, sigmas in (
            (epi, np.arange(d.n), range(lay.sigma_minus.start, lay.sigma_minus.stop)),
            (hypo, self.plus_index, range(lay.sigma_plus.start, lay.sigma_plus.stop)),
        ):
            for i, k in zip(rows, sigmas):
                m = np.zeros((2, lay.size))
                m[0, k] = 1.0
                m[1, lay.beta] = d.a[i] * d.x[i]
                m0 = np.array([0.0, d.a[i] * self.bias])
                out.extend(c.pullback(m, m0) for c in graph)
        return out

    def domain(self) -> Polyhedron:
        lay, box = self.layout, self.spec.box
        lb = np.full(lay.size, -np.inf)
        ub = np.full(lay.size, np.inf)
        for sl in (lay.w, lay.beta):
            lb[sl] = -box
            ub[sl] = box
        lb[lay.sigma_minus] = 0.0
        return Polyhedron(lb=lb, ub=ub)


class ConvexObjective:
    """Convex part of the empirical DC objective."""

    def __init__(self, problem: EmpiricalProblem) -> None:
        self.problem = problem

    def __call__(self, x: FloatArray, /) -> float:
        return self.problem.convex_value(x)

    @cached_property
    def _lifted(self) -> ConvexQP:
        return split_variables(self.problem.ingredients)

    def lift(self) -> ConvexQP:
        return self._lifted

    def lift_point(self, x: FloatArray, /) -> FloatArray:
        return consistent_split(self.problem.ingredients, x)


class SmoothObjective:
    """Smooth convex part subtracted from :class:`ConvexObjective`."""

    def __init__(self, problem: EmpiricalProblem) -> None:
        self.problem = problem

    def __call__(self, x: FloatArray, /) -> float:
        return self.problem.smooth_value(x)

    def gradient(self, x: FloatArray, /) -> FloatArray:
        return self.problem.smooth_gradient(x)


def build_program(spec: FitSpec, bias: int) -> ReverseConvexDCProgram:
    """The empirical problem with the rule bias fixed to ``bias``, as a
    reverse-convex constrained DC program over
    ``(b, b0, beta, sigma-, sigma+)``.
    """
    pb = EmpiricalProblem(spec, bias)
    return ReverseConvexDCProgram(
        dim=pb.layout.size,
        f=ConvexObjective(pb),
        g=SmoothObjective(pb),
        constraints=pb.constraints(),
        domain=pb.domain(),
    )


def recover_sigma(
    spec: FitSpec, bias: int, beta: npt.ArrayLike
) -> Tuple[FloatArray, FloatArray]:
    """The epigraph variables minimising the objective at a fixed rule:
    ``sigma- = 1(s > 0)`` and ``sigma+ = 1(s >= 0)`` (positive outcomes
    only).
    """
    pb = EmpiricalProblem(spec, bias)
    s = pb.margins(np.asarray(beta, dtype=float))
    return (s > 0).astype(float), (s[pb.plus_index] >= 0).astype(float)


def initial_point(
    spec: FitSpec, bias: int, beta_start: Optional[npt.ArrayLike] = None
) -> FloatArray:
    """Feasible starting point: ``w = 0``, ``beta = beta_start`` (clipped
    to the box, zeros by default) and the recovered epigraph variables.
    """
    pb = EmpiricalProblem(spec, bias)
    lay = pb.layout
    beta = (
        np.zeros(lay.p)
        if beta_start is None
        else np.clip(np.asarray(beta_start, dtype=float), -spec.box, spec.box)
    )
    z = np.zeros(lay.size)
    z[lay.beta] = beta
    z[lay.sigma_minus], z[lay.sigma_plus] = recover_sigma(spec, bias, beta)
    return z


def objective_direct(spec: FitSpec, theta: LinearRule, w: AllocParams) -> float:
    """The empirical objective with the indicators themselves, at the
    rule ``theta`` (whose intercept is the bias) and allocation ``w``.
    """
    bias = int(theta.intercept)
    pb = EmpiricalProblem(spec, bias)
    d = spec.data
    lay = pb.layout
    z = np.zeros(lay.size)
    z[lay.b] = w.b
    z[lay.b0] = w.b0
    z[lay.beta] = theta.beta
    s = pb.margins(theta.beta)
    a = pb.bracket(pb.residuals(z[lay.w]))
    return float(
        pb.penalty(z)
        - pb.surrogate(z)[0]
        + pb._scale @ ((np.maximum(-d.z, 0.0) + a) * (s > 0))
        - pb._plus_scale @ (s[pb.plus_index] >= 0)
    )


def dlearn_start(spec: FitSpec) -> Dict[int, FloatArray]:
    """Rule slopes to start each bias run from, taken from a DLearn fit.

    The DLearn coefficients are scaled so that the intercept has
    magnitude 1; its sign selects the bias run which gets them, the
    other run starts from zeros.
    """
    from .baselines import fit_dlearn

    p = spec.data.p
    starts = {1: np.zeros(p), -1: np.zeros(p)}
    theta = fit_dlearn(spec.data, spec.lam_rule)
    if theta.intercept != 0:
        starts[1 if theta.intercept > 0 else -1] = np.clip(
            theta.beta / abs(theta.intercept), -spec.box, spec.box
        )
    return starts


def _logistic_slope(
    x: FloatArray, label: FloatArray, weight: FloatArray, bias: int, box: float
) -> FloatArray:
    def loss(beta: FloatArray) -> Tuple[float, FloatArray]:
        m = label * (x @ beta + bias)
        value = float(weight @ np.logaddexp(0.0, -m)) + 0.5 * START_RIDGE * float(beta @ beta)
        grad = -(x.T @ (weight * label * expit(-m))) + START_RIDGE * beta
        return value, grad

    p = x.shape[1]
    res = minimize(
        loss, np.zeros(p), jac=True, method="L-BFGS-B", bounds=[(-box, box)] * p
    )
    if not res.success:
        logger.debug("weighted logistic start (bias %+d): %s", bias, res.message)
    return np.asarray(res.x, dtype=float)


def weighted_start(spec: FitSpec) -> Dict[int, FloatArray]:
    """Rule slopes to start each bias run from, fitted by outcome
    weighted logistic regression.

    With the allocation held at the optimal action ``eta`` of the
    inverse-propensity weighted outcomes, deciding ``A_i`` for sample
    ``i`` lowers the objective by
    ``r_i = Z+_i / (|N+| pi_i) - (Z-_i + a_i) / (N pi_i)``. The slope is
    fitted to the labels ``sign(r_i) A_i`` with weights ``|r_i|``, the
    intercept fixed to each bias in turn.
    """
    d = spec.data
    starts = {1: np.zeros(d.p), -1: np.zeros(d.p)}
    eta = empirical_oce(SampleSet(d.z, 1.0 / d.propensity), spec.utility).eta
    pb = EmpiricalProblem(spec, 1)
    gain = np.zeros(d.n)
    gain[pb.plus_index] = pb._plus_scale
    r = gain - pb._scale * (np.maximum(-d.z, 0.0) + pb.bracket(d.z - eta))
    total = float(np.abs(r).sum())
    if total == 0:
        return starts
    label = np.where(r >= 0, 1.0, -1.0) * d.a
    for bias in (1, -1):
        starts[bias] = _logistic_slope(d.x, label, np.abs(r) / total, bias, spec.box)
    return starts


@dataclass
class BiasRun:
    bias: int
    x: FloatArray
    trace: SolverTrace

    @property
    def objective(self) -> float:
        return self.trace.objective


@dataclass
class FittedIDR:
    """Result of :func:`fit`: the kept rule and allocation, their
    objective values, both bias runs and the stationarity certificate.
    """

    rule: RuleParams
    alloc: AllocParams
    objective: float
    objective_direct: float
    runs: Dict[int, BiasRun]
    certificate: Optional[Certificate]
    epigraph: Tuple[FloatArray, FloatArray] = field(repr=False)

    @property
    def iterations(self) -> int:
        return self.runs[self.rule.bias].trace.iterations

    def __call__(self, x: npt.ArrayLike) -> FloatArray:
        return self.rule(x)

    def to_dict(self) -> dict[str, object]:
        cert = self.certificate
        return {
            "beta": self.rule.beta.tolist(),
            "bias": self.rule.bias,
            "b": self.alloc.b.tolist(),
            "b0": self.alloc.b0,
            "objective": self.objective,
            "objective_direct": self.objective_direct,
            "iterations": self.iterations,
            "runs": {
                f"{bias:+d}": {
                    "objective": run.objective,
                    "initial_objective": run.trace.objectives[0],
                    "iterations": run.trace.iterations,
                    "converged": run.trace.converged,
                    "stop_reason": run.trace.stop_reason,
                }
                for bias, run in sorted(self.runs.items(), reverse=True)
            },
            "certificate": None
            if cert is None
            else {
                "certified": cert.certified,
                "partial": cert.partial,
                "tuples_checked": cert.tuples_checked,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def fit(spec: FitSpec) -> FittedIDR:
    """Fits the rule with bias ``+1`` and with bias ``-1`` and keeps the
    run with the smaller final objective (``+1`` on ties, up to
    ``TIE_TOL`` relative to ``1 + |h|``).

    :raises SolverError: propagated from the DC solver
    """
    if spec.beta_init is not None:
        starts = {1: spec.beta_init, -1: spec.beta_init}
    elif spec.warm_start == "dlearn":
        starts = dlearn_start(spec)
    elif spec.warm_start == "weighted":
        starts = weighted_start(spec)
    else:
        starts = {1: np.zeros(spec.data.p), -1: np.zeros(spec.data.p)}

    runs: Dict[int, BiasRun] = {}
    programs: Dict[int, ReverseConvexDCProgram] = {}
    for bias in (1, -1):
        prog = programs[bias] = build_program(spec, bias)
        x0 = initial_point(spec, bias, starts[bias])
        x, trace = solve(
            prog,
            x0,
            spec.prox,
            eps_step=spec.eps_step,
            eps_obj=spec.eps_obj,
            max_iter=spec.max_iter,
            eps_tie=spec.eps_tie,
            eps_feas=spec.eps_feas,
            qp_tol=spec.qp_tol,
        )
        runs[bias] = BiasRun(bias, x, trace)
        logger.debug(
            "bias %+d: objective %.8g -> %.8g in %d iterations",
            bias,
            trace.objectives[0],
            trace.objective,
            trace.iterations,
        )

    lead = runs[-1].objective - runs[1].objective
    best = 1 if lead >= -TIE_TOL * (1.0 + abs(runs[1].objective)) else -1
    x = runs[best].x
    lay = EmpiricalProblem(spec, best).layout
    rule = RuleParams(x[lay.beta], best)
    alloc = AllocParams(x[lay.b], float(x[lay.b0]))
    certificate = (
        check_a_stationarity(programs[best], x, eps_tie=spec.eps_tie, eps_feas=spec.eps_feas)
        if spec.certify
        else None
    )
    logger.info(
        "fitted rule with bias %+d, objective %.8g (other run %.8g)",
        best,
        runs[best].objective,
        runs[-best].objective,
    )
    return FittedIDR(
        rule=rule,
        alloc=alloc,
        objective=runs[best].objective,
        objective_direct=objective_direct(spec, rule, alloc),
        runs=runs,
        certificate=certificate,
        epigraph=(x[lay.sigma_minus], x[lay.sigma_plus]),
    )
