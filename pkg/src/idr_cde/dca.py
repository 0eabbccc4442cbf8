"""Proximal DC algorithm for reverse-convex constrained DC programs

    min f(x) - g(x)  s.t.  x in X,  max_j (b_ij . x + beta_ij) >= 0 for all i

where ``f`` is convex (and representable as a convex QP), ``g`` is
smooth convex and ``X`` is a polyhedron. Every step linearises ``g``
at the current iterate, replaces each max-affine constraint by one of
its active pieces and solves the resulting strictly convex QP, so
iterates stay feasible and the objective decreases.
"""

from __future__ import annotations

__all__ = [
    "Certificate",
    "ConvexPart",
    "Polyhedron",
    "Quadratic",
    "ReverseConvexDCProgram",
    "SmoothPart",
    "SolverTrace",
    "Step",
    "active_set",
    "argmax_indices",
    "check_a_stationarity",
    "dc_step",
    "default_prox",
    "linearized_qp",
    "solve",
]

import abc
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Literal, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .core import InfeasibleError
from .epigraph import MaxAffineConstraint
from .qp import ConvexQP, QPSolution, augment, solve_qp

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

EPS_TIE = 1e-9
EPS_FEAS = 1e-8
EPS_STEP = 1e-6
MAX_ITER = 200
#: objective stopping threshold of the fitting runs, relative to 1 + |h|
EPS_OBJ = 1e-6
#: slack of the per-step descent check, relative to 1 + |h|
EPS_DESCENT = 1e-9


class ConvexPart(Protocol):
    """ConvexPart()

    Convex function given as the projection of a convex QP: ``f(x)`` is
    the minimum over auxiliary variables ``u`` of the QP objective at
    ``(x, u)`` under the QP's constraints.
    """

    @abc.abstractmethod
    def __call__(self, x: FloatArray, /) -> float:
        """Value of ``f`` at ``x``."""
        ...

    @abc.abstractmethod
    def lift(self) -> ConvexQP:
        """The lifted QP, whose leading variables are ``x``."""
        ...

    @abc.abstractmethod
    def lift_point(self, x: FloatArray, /) -> FloatArray:
        """A lifted point over ``x`` at which the QP objective is ``f(x)``."""
        ...


class SmoothPart(Protocol):
    """SmoothPart()

    Continuously differentiable convex function.
    """

    @abc.abstractmethod
    def __call__(self, x: FloatArray, /) -> float: ...

    @abc.abstractmethod
    def gradient(self, x: FloatArray, /) -> FloatArray: ...


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``1/2 x'Qx + q'x + const``, usable as either part of a program."""

    Q: FloatArray
    q: FloatArray
    const: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, dtype=float)))

    def __call__(self, x: FloatArray, /) -> float:
        xs = np.asarray(x, dtype=float)
        return float(0.5 * xs @ self.Q @ xs + self.q @ xs + self.const)

    def gradient(self, x: FloatArray, /) -> FloatArray:
        return np.asarray(self.Q @ np.asarray(x, dtype=float) + self.q)

    def lift(self) -> ConvexQP:
        return ConvexQP(self.Q, self.q)

    def lift_point(self, x: FloatArray, /) -> FloatArray:
        return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """``{x : Gx <= h, lb <= x <= ub}``; missing parts are unconstrained."""

    G: Optional[FloatArray] = None
    h: Optional[FloatArray] = None
    lb: Optional[FloatArray] = None
    ub: Optional[FloatArray] = None

    def violation(self, x: FloatArray) -> float:
        xs = np.asarray(x, dtype=float)
        v = 0.0
        if self.G is not None and self.h is not None:
            v = max(v, float((np.asarray(self.G) @ xs - self.h).max(initial=0.0)))
        if self.lb is not None:
            v = max(v, float((self.lb - xs).max(initial=0.0)))
        if self.ub is not None:
            v = max(v, float((xs - self.ub).max(initial=0.0)))
        return v


@dataclass(frozen=True, eq=False)
class ReverseConvexDCProgram:
    """``min f(x) - g(x)`` over ``domain`` and the max-affine ``constraints``."""

    dim: int
    f: ConvexPart
    g: SmoothPart
    constraints: Sequence[MaxAffineConstraint]
    domain: Polyhedron = field(default_factory=Polyhedron)

    def __post_init__(self) -> None:
        for i, c in enumerate(self.constraints):
            if c.dim != self.dim:
                raise ValueError(f"constraint {i} acts on {c.dim} variables, not {self.dim}")

    def objective(self, x: FloatArray) -> float:
        return self.f(x) - self.g(x)

    def constraint_values(self, x: FloatArray) -> FloatArray:
        return np.array([c(x) for c in self.constraints])

    def infeasibility(self, x: FloatArray) -> float:
        """Largest violation of the domain or of a constraint."""
        cv = self.constraint_values(x)
        return max(self.domain.violation(x), float((-cv).max(initial=0.0)))


def argmax_indices(c: MaxAffineConstraint, x: FloatArray, eps_tie: float = EPS_TIE) -> List[int]:
    """Indices of the pieces of ``c`` within ``eps_tie`` of its value at ``x``."""
    if eps_tie < 0:
        raise ValueError("eps_tie must be nonnegative")
    t = c.terms(x)
    return np.flatnonzero(t >= t.max() - eps_tie).tolist()


def active_set(
    prog: ReverseConvexDCProgram, x: FloatArray, eps_feas: float = EPS_FEAS
) -> List[int]:
    """Constraints whose value at ``x`` lies in ``[-eps_feas, eps_feas]``.

    :raises InfeasibleError: if ``x`` violates the program by more than
        ``eps_feas``
    """
    if (v := prog.infeasibility(x)) > eps_feas:
        raise InfeasibleError(f"point violates the program by {v:.3g}")
    return np.flatnonzero(np.abs(prog.constraint_values(x)) <= eps_feas).tolist()


def default_prox(prog: ReverseConvexDCProgram, x0: FloatArray) -> float:
    """``1e-4 (1 + |grad g(x0)|_inf)``."""
    return 1e-4 * (1.0 + float(np.abs(prog.g.gradient(x0)).max(initial=0.0)))


def linearized_qp(
    prog: ReverseConvexDCProgram,
    center: FloatArray,
    c: float,
    choice: Sequence[int],
) -> ConvexQP:
    """QP of ``f(x) - grad g(center) . x + c/2 |x - center|^2`` over the
    domain and the chosen pieces (constant terms dropped).
    """
    grad = prog.g.gradient(center)
    rows = [-prog.constraints[i].coef[j] for i, j in enumerate(choice)]
    rhs = [prog.constraints[i].offset[j] for i, j in enumerate(choice)]
    d = prog.domain
    if d.G is not None and d.h is not None:
        rows.extend(np.atleast_2d(np.asarray(d.G, dtype=float)))
        rhs.extend(np.asarray(d.h, dtype=float).reshape(-1))
    G = np.array(rows).reshape(len(rows), prog.dim) if rows else None
    return augment(
        prog.f.lift(),
        quad=c,
        linear=-grad - c * center,
        G=G,
        h=np.array(rhs) if rows else None,
        lb=d.lb,
        ub=d.ub,
    )


def _lowest(prog: ReverseConvexDCProgram, x: FloatArray, eps_tie: float) -> Tuple[int, ...]:
    return tuple(argmax_indices(c, x, eps_tie)[0] for c in prog.constraints)


class Step(NamedTuple):
    x: FloatArray
    choice: Tuple[int, ...]
    qp: QPSolution


def dc_step(
    prog: ReverseConvexDCProgram,
    x: FloatArray,
    c: float,
    choice: Optional[Sequence[int]] = None,
    *,
    eps_tie: float = EPS_TIE,
    qp_tol: float = 1e-8,
) -> Step:
    """One proximal DC step from the feasible point ``x``.

    :param choice: one active piece per constraint, by default the
        lowest index among the pieces within ``eps_tie`` of the max
    :raises InfeasibleError: if the subproblem is infeasible
    """
    if not c > 0:
        raise ValueError(f"proximal weight must be positive, got {c}")
    xs = np.asarray(x, dtype=float)
    picked = _lowest(prog, xs, eps_tie) if choice is None else tuple(choice)
    if len(picked) != len(prog.constraints):
        raise ValueError(f"{len(picked)} pieces chosen for {len(prog.constraints)} constraints")
    qp = linearized_qp(prog, xs, c, picked)
    sol = solve_qp(qp, tol=qp_tol, x0=prog.f.lift_point(xs))
    return Step(np.array(sol.x[: prog.dim]), picked, sol)


StopReason = Literal["step", "objective", "stalled", "max_iter"]


@dataclass
class SolverTrace:
    """Iterates, objective values, step norms, chosen pieces and QP
    iteration counts of a DC run, and why it stopped.
    """

    prox: float
    iterates: List[FloatArray] = field(default_factory=list)
    objectives: List[float] = field(default_factory=list)
    step_norms: List[float] = field(default_factory=list)
    choices: List[Tuple[int, ...]] = field(default_factory=list)
    qp_iterations: List[int] = field(default_factory=list)
    converged: bool = False
    stop_reason: Optional[StopReason] = None

    @property
    def iterations(self) -> int:
        return len(self.step_norms)

    @property
    def objective(self) -> float:
        return self.objectives[-1]

    def to_dict(self) -> dict[str, object]:
        return {
            "prox": self.prox,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "initial_objective": self.objectives[0] if self.objectives else None,
            "iterations": [
                {
                    "iteration": k + 1,
                    "objective": self.objectives[k + 1],
                    "step_norm": self.step_norms[k],
                    "tuple": list(self.choices[k]),
                    "qp_iterations": self.qp_iterations[k],
                }
                for k in range(self.iterations)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _accepted(
    prog: ReverseConvexDCProgram,
    x: FloatArray,
    value: float,
    new: FloatArray,
    c: float,
    eps_feas: float,
) -> bool:
    """Whether ``new`` is feasible and decreases the objective by at
    least ``c/2 |new - x|^2``.
    """
    if prog.infeasibility(new) > eps_feas:
        return False
    drop = 0.5 * c * float(np.sum(np.square(new - x)))
    return prog.objective(new) + drop <= value + EPS_DESCENT * (1.0 + abs(value))


def solve(
    prog: ReverseConvexDCProgram,
    x0: npt.ArrayLike,
    c: Optional[float] = None,
    *,
    eps_step: float = EPS_STEP,
    eps_obj: Optional[float] = None,
    max_iter: int = MAX_ITER,
    eps_tie: float = EPS_TIE,
    eps_feas: float = EPS_FEAS,
    qp_tol: float = 1e-8,
) -> Tuple[FloatArray, SolverTrace]:
    """Runs DC steps from ``x0`` until

    * the step is at most ``eps_step`` in max-norm (``"step"``),
    * with ``eps_obj`` set, the decrease is at most
      ``eps_obj (1 + |h|)`` and the pieces chosen at the new point are
      unchanged, or the decrease was that small twice in a row
      (``"objective"``),
    * a subproblem solution fails the descent or feasibility check even
      after a re-solve at ``qp_tol / 100``, in which case the step is
      dropped and the current point kept (``"stalled"``),
    * or ``max_iter`` steps were taken (``"max_iter"``).

    Only the iteration limit leaves ``trace.converged`` unset.

    :raises InfeasibleError: if ``x0`` is infeasible
    """
    x = np.array(x0, dtype=float)
    if x.shape != (prog.dim,):
        raise ValueError(f"starting point has shape {x.shape}, expected ({prog.dim},)")
    if eps_obj is not None and eps_obj < 0:
        raise ValueError("eps_obj must be nonnegative")
    active_set(prog, x, eps_feas)
    prox = default_prox(prog, x) if c is None else c
    trace = SolverTrace(prox)
    trace.iterates.append(x)
    trace.objectives.append(prog.objective(x))

    choice = _lowest(prog, x, eps_tie)
    flat = 0
    for it in range(1, max_iter + 1):
        value = trace.objectives[-1]
        step = dc_step(prog, x, prox, choice, eps_tie=eps_tie, qp_tol=qp_tol)
        if not _accepted(prog, x, value, step.x, prox, eps_feas):
            tighter = max(qp_tol * 1e-2, 1e-12)
            logger.debug("DC iteration %d: re-solving the subproblem at tolerance %g", it, tighter)
            step = dc_step(prog, x, prox, choice, eps_tie=eps_tie, qp_tol=tighter)
            if not _accepted(prog, x, value, step.x, prox, eps_feas):
                logger.info("DC iteration %d: no verified descent, keeping the current point", it)
                trace.stop_reason = "stalled"
                break
        delta = float(np.abs(step.x - x).max(initial=0.0))
        x = step.x
        trace.iterates.append(x)
        trace.objectives.append(prog.objective(x))
        trace.step_norms.append(delta)
        trace.choices.append(step.choice)
        trace.qp_iterations.append(step.qp.iterations)
        logger.debug(
            "DC iteration %d: objective %.10g, step %.3g, %d QP iterations",
            it,
            trace.objectives[-1],
            delta,
            step.qp.iterations,
        )
        if delta <= eps_step:
            trace.stop_reason = "step"
            break
        choice = _lowest(prog, x, eps_tie)
        if eps_obj is not None:
            if value - trace.objectives[-1] <= eps_obj * (1.0 + abs(value)):
                flat += 1
                if choice == step.choice or flat >= 2:
                    trace.stop_reason = "objective"
                    break
            else:
                flat = 0
    else:
        trace.stop_reason = "max_iter"
        logger.warning("DC algorithm stopped after %d iterations", max_iter)
    trace.converged = trace.stop_reason != "max_iter"
    return x, trace


@dataclass(frozen=True)
class Certificate:
    """Outcome of an A-stationarity check. Truthy iff ``certified``."""

    certified: bool
    #: the certifying choice of pieces, if any
    choice: Optional[Tuple[int, ...]]
    #: the enumeration was capped to the lowest-index tuple
    partial: bool
    tuples_checked: int

    def __bool__(self) -> bool:
        return self.certified


def check_a_stationarity(
    prog: ReverseConvexDCProgram,
    x: npt.ArrayLike,
    tol: float = 1e-6,
    *,
    cap: int = 64,
    eps_tie: float = EPS_TIE,
    eps_feas: float = EPS_FEAS,
) -> Certificate:
    """Checks whether ``x`` minimises the linearised program
    ``f(y) - g(x) - grad g(x) . (y - x)`` over the domain and the pieces
    of some tuple of active indices, up to the absolute tolerance ``tol``.

    At most ``cap`` tuples are tried, beyond that only the lowest-index
    tuple is and the certificate is marked partial.

    :raises InfeasibleError: if ``x`` is infeasible
    """
    xs = np.array(x, dtype=float)
    active_set(prog, xs, eps_feas)
    sets = [argmax_indices(c, xs, eps_tie) for c in prog.constraints]
    total = math.prod(len(s) for s in sets)
    partial = total > cap
    tuples: Iterable[Tuple[int, ...]] = (
        [tuple(s[0] for s in sets)] if partial else itertools.product(*sets)
    )

    value = prog.objective(xs)
    gx, grad = prog.g(xs), prog.g.gradient(xs)
    checked = 0
    for choice in tuples:
        checked += 1
        qp = linearized_qp(prog, xs, 1e-10, choice)
        y = solve_qp(qp, x0=prog.f.lift_point(xs)).x[: prog.dim]
        linearized = prog.f(y) - gx - float(grad @ (y - xs))
        if linearized >= value - tol:
            return Certificate(True, tuple(choice), partial, checked)
    return Certificate(False, None, partial, checked)
