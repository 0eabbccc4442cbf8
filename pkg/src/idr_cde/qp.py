"""Convex quadratic programs: construction of the lifted DC subproblem
and an interior-point solver.

The solver is a Mehrotra predictor-corrector primal-dual method on

    min 1/2 x'Qx + q'x  s.t.  Gx <= h, Ax = b, lb <= x <= ub

where finite bounds are handled as extra inequality rows. Each
iteration factors the reduced (quasi-definite) KKT matrix once with a
sparse LU and reuses it for the predictor and corrector solves. The
final iterate is polished by re-solving the KKT system on its active
set, which returns vertex solutions exactly on their active rows.
"""

from __future__ import annotations

__all__ = [
    "ConvexQP",
    "KKTResiduals",
    "Layout",
    "QPSolution",
    "SplitIngredients",
    "augment",
    "consistent_split",
    "dump_triplets",
    "solve_qp",
    "split_variables",
]

import logging
from dataclasses import dataclass
from typing import IO, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import InfeasibleError, QPFailure

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
Matrix = sp.csr_matrix

#: regularisation of the equality block of the reduced KKT matrix
KKT_DELTA = 1e-12
#: ridge on variables which only exist because of a split
SPLIT_RIDGE = 1e-12
#: regularisation of the active-set polishing system
POLISH_DELTA = 1e-10
#: iterative refinement steps of the polishing solve
POLISH_REFINE = 5

IntArray = npt.NDArray[np.intp]


def _sparse(m: object, shape: Tuple[int, int]) -> Matrix:
    if m is None:
        return sp.csr_matrix(shape)
    out = sp.csr_matrix(m, dtype=float)
    if out.shape != shape:
        raise ValueError(f"expected a {shape} matrix, got {out.shape}")
    return out


def _hstack(blocks: Sequence[Matrix], rows: int) -> Matrix:
    kept = [b for b in blocks if b.shape[1]]
    return sp.hstack(kept, format="csr") if kept else sp.csr_matrix((rows, 0))


def _vstack(blocks: Sequence[Matrix], cols: int) -> Matrix:
    kept = [b for b in blocks if b.shape[0]]
    return sp.vstack(kept, format="csr") if kept else sp.csr_matrix((0, cols))


def _vector(v: Optional[npt.ArrayLike], size: int, fill: float) -> FloatArray:
    if v is None:
        return np.full(size, fill)
    out = np.array(v, dtype=float).reshape(-1)
    if out.shape != (size,):
        raise ValueError(f"expected {size} entries, got {out.shape[0]}")
    return out


@dataclass(frozen=True, eq=False)
class ConvexQP:
    """``min 1/2 x'Qx + q'x`` subject to ``Gx <= h``, ``Ax = b`` and
    ``lb <= x <= ub`` (infinite bounds are absent).

    ``splits`` optionally pairs nonnegative variables ``(plus, minus)``
    which enter the constraints only through ``plus - minus`` and on
    which the objective does not decrease when both grow by the same
    amount. Solutions are returned with ``min(plus, minus) = 0``.
    """

    __slots__ = ("A", "G", "Q", "b", "h", "lb", "q", "splits", "ub")
    Q: Matrix
    q: FloatArray
    G: Matrix
    h: FloatArray
    A: Matrix
    b: FloatArray
    lb: FloatArray
    ub: FloatArray
    splits: Optional[Tuple[IntArray, IntArray]]

    def __init__(
        self,
        Q: object,
        q: npt.ArrayLike,
        G: object = None,
        h: Optional[npt.ArrayLike] = None,
        A: object = None,
        b: Optional[npt.ArrayLike] = None,
        lb: Optional[npt.ArrayLike] = None,
        ub: Optional[npt.ArrayLike] = None,
        splits: Optional[Tuple[npt.ArrayLike, npt.ArrayLike]] = None,
    ) -> None:
        qv = np.array(q, dtype=float).reshape(-1)
        n = qv.shape[0]
        Qm = _sparse(Q, (n, n))
        asym = abs(Qm - Qm.T)
        if asym.nnz and asym.max() > 1e-12 * (1.0 + abs(Qm).max()):
            raise ValueError("Q is not symmetric")
        hv = np.zeros(0) if h is None else np.array(h, dtype=float).reshape(-1)
        bv = np.zeros(0) if b is None else np.array(b, dtype=float).reshape(-1)
        lbv = _vector(lb, n, -np.inf)
        ubv = _vector(ub, n, np.inf)
        if np.any(lbv > ubv):
            raise ValueError("lower bound above upper bound")
        for name, value in (
            ("Q", Qm),
            ("q", qv),
            ("G", _sparse(G, (hv.shape[0], n))),
            ("h", hv),
            ("A", _sparse(A, (bv.shape[0], n))),
            ("b", bv),
            ("lb", lbv),
            ("ub", ubv),
        ):
            object.__setattr__(self, name, value)
        pairs = None
        if splits is not None:
            plus = np.asarray(splits[0], dtype=np.intp).reshape(-1)
            minus = np.asarray(splits[1], dtype=np.intp).reshape(-1)
            if plus.shape != minus.shape:
                raise ValueError("split pairs must have the same length")
            if plus.size and (
                min(plus.min(), minus.min()) < 0 or max(plus.max(), minus.max()) >= n
            ):
                raise ValueError("split index out of range")
            pairs = (plus, minus)
        object.__setattr__(self, "splits", pairs)

    @property
    def n(self) -> int:
        return int(self.q.shape[0])

    def objective(self, x: npt.ArrayLike) -> float:
        xs = np.asarray(x, dtype=float)
        return float(0.5 * xs @ (self.Q @ xs) + self.q @ xs)

    def inequalities(self) -> Tuple[Matrix, FloatArray, FloatArray, FloatArray]:
        """``G`` and ``h`` with the finite bounds appended as rows, and
        the indices of the bounded variables (lower then upper).
        """
        lo = np.flatnonzero(np.isfinite(self.lb))
        hi = np.flatnonzero(np.isfinite(self.ub))
        eye = sp.identity(self.n, format="csr")
        G = _vstack([self.G, -eye[lo], eye[hi]], self.n)
        h = np.concatenate([self.h, -self.lb[lo], self.ub[hi]])
        return G, h, lo, hi


class KKTResiduals(NamedTuple):
    stationarity: float
    primal: float
    complementarity: float


@dataclass(frozen=True)
class QPSolution:
    """Primal point, multipliers and the KKT residuals recomputed from
    them.
    """

    x: FloatArray
    #: multipliers of the ``Gx <= h`` rows
    z: FloatArray
    #: multipliers of the ``Ax = b`` rows
    y: FloatArray
    z_lower: FloatArray
    z_upper: FloatArray
    residuals: KKTResiduals
    status: Literal["optimal"]
    iterations: int
    objective: float


def kkt_residuals(
    qp: ConvexQP,
    x: FloatArray,
    z: FloatArray,
    y: FloatArray,
    z_lower: FloatArray,
    z_upper: FloatArray,
) -> KKTResiduals:
    """Max-norm residuals of the KKT conditions at ``(x, z, y)``."""
    grad = qp.Q @ x + qp.q + qp.G.T @ z + qp.A.T @ y - z_lower + z_upper
    slack = qp.h - qp.G @ x
    lo, hi = np.isfinite(qp.lb), np.isfinite(qp.ub)
    primal = [
        np.maximum(-slack, 0.0),
        np.abs(qp.A @ x - qp.b),
        np.maximum(qp.lb[lo] - x[lo], 0.0),
        np.maximum(x[hi] - qp.ub[hi], 0.0),
    ]
    comp = [
        np.abs(z * slack),
        np.abs(z_lower[lo] * (x[lo] - qp.lb[lo])),
        np.abs(z_upper[hi] * (qp.ub[hi] - x[hi])),
    ]
    return KKTResiduals(
        float(np.abs(grad).max(initial=0.0)),
        max(float(v.max(initial=0.0)) for v in primal),
        max(float(v.max(initial=0.0)) for v in comp),
    )


def _max_step(v: FloatArray, dv: FloatArray) -> float:
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, (-v[neg] / dv[neg]).min()))


class _Iterate(NamedTuple):
    x: FloatArray
    s: FloatArray
    z: FloatArray
    y: FloatArray
    iterations: int
    converged: bool


def _interior_point(
    Q: Matrix,
    q: FloatArray,
    G: Matrix,
    h: FloatArray,
    A: Matrix,
    b: FloatArray,
    x0: Optional[FloatArray],
    tol: float,
    max_iter: int,
) -> _Iterate:
    n, m, me = q.shape[0], h.shape[0], b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(m)
    y = np.zeros(me)

    scale_d = 1.0 + float(np.abs(q).max(initial=0.0))
    # inequality rows are held to an absolute tolerance so that accepted
    # points are feasible to within tol
    scale_e = 1.0 + float(np.abs(b).max(initial=0.0))
    reg = -KKT_DELTA * sp.identity(me, format="csr")
    GT, AT = G.T.tocsr(), A.T.tocsr()

    for it in range(max_iter + 1):
        rd = Q @ x + q + GT @ z + AT @ y
        rp = G @ x + s - h
        re = A @ x - b
        comp = float((s * z).max(initial=0.0))
        obj = 0.5 * x @ (Q @ x) + q @ x
        if (
            np.abs(rd).max(initial=0.0) <= tol * scale_d
            and np.abs(rp).max(initial=0.0) <= tol
            and np.abs(re).max(initial=0.0) <= tol * scale_e
            and comp <= tol
            and float(s @ z) <= tol * (1.0 + abs(obj))
        ):
            return _Iterate(x, s, z, y, it, True)
        if it == max_iter or not np.all(np.isfinite(rd)):
            break

        w = z / s
        H = Q + GT @ sp.diags(w) @ G if m else Q
        K = sp.bmat([[H, AT], [A, reg]], format="csc") if me else H.tocsc()
        try:
            lu = splu(K)
        except RuntimeError as e:
            logger.debug("KKT factorisation failed at iteration %d: %s", it, e)
            break

        def newton(
            rc: FloatArray,
        ) -> Tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
            rhs = np.concatenate([-rd - GT @ (w * rp - rc / s), -re])
            sol = lu.solve(rhs)
            dx, dy = sol[:n], sol[n:]
            dz = w * (G @ dx + rp) - rc / s
            ds = -(G @ dx) - rp
            return dx, ds, dz, dy

        if m:
            mu = float(s @ z) / m
            dx, ds, dz, dy = newton(s * z)
            alpha = min(_max_step(s, ds), _max_step(z, dz))
            mu_aff = float((s + alpha * ds) @ (z + alpha * dz)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, ds, dz, dy = newton(s * z + ds * dz - sigma * mu)
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        else:
            dx, ds, dz, dy = newton(np.zeros(0))
            alpha = 1.0

        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
        y = y + alpha * dy

    return _Iterate(x, s, z, y, it, False)


def _phase_one(
    G: Matrix, h: FloatArray, A: Matrix, b: FloatArray, tol: float, max_iter: int
) -> Optional[float]:
    """Smallest uniform violation ``t`` of ``Gx - t <= h`` (floored at
    -1) subject to ``Ax = b``, or ``None`` if that problem also fails.
    """
    m, n = G.shape
    ridge = 1e-8
    Q = ridge * sp.identity(n + 1, format="csr")
    q = np.zeros(n + 1)
    q[-1] = 1.0
    G1 = _vstack(
        [
            _hstack([G, sp.csr_matrix(-np.ones((m, 1)))], m),
            _hstack([sp.csr_matrix((1, n)), sp.csr_matrix(-np.ones((1, 1)))], 1),
        ],
        n + 1,
    )
    h1 = np.concatenate([h, [1.0]])
    A1 = _hstack([A, sp.csr_matrix((A.shape[0], 1))], A.shape[0])
    x0 = np.zeros(n + 1)
    x0[-1] = max(float((-h).max(initial=0.0)), 0.0) + 1.0
    res = _interior_point(Q, q, G1, h1, A1, b, x0, tol, max_iter)
    return float(res.x[-1]) if res.converged else None


def _polish(
    Q: Matrix,
    q: FloatArray,
    G: Matrix,
    h: FloatArray,
    A: Matrix,
    b: FloatArray,
    res: _Iterate,
) -> Optional[_Iterate]:
    """Re-solves the KKT system with the rows on which the
    interior-point multiplier exceeds the slack held as equalities.

    The regularised matrix is factored once and the solution refined
    against the exact one. Inactive rows get zero multipliers.
    """
    n, me = q.shape[0], b.shape[0]
    active = np.flatnonzero(res.z > res.s)
    C = _vstack([A, G[active]], n)
    k = C.shape[0]
    K = sp.bmat([[Q, C.T], [C, None]], format="csc") if k else Q.tocsc()
    reg = sp.diags(np.concatenate([np.full(n, POLISH_DELTA), np.full(k, -POLISH_DELTA)]))
    rhs = np.concatenate([-q, b, h[active]])
    try:
        lu = splu((K + reg).tocsc())
    except RuntimeError as e:
        logger.debug("polishing factorisation failed: %s", e)
        return None
    sol = lu.solve(rhs)
    for _ in range(POLISH_REFINE):
        sol = sol + lu.solve(rhs - K @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    x, y = sol[:n], sol[n : n + me]
    z = np.zeros(h.shape[0])
    z[active] = sol[n + me :]
    return _Iterate(x, h - G @ x, z, y, res.iterations, True)


class _Candidate(NamedTuple):
    x: FloatArray
    z: FloatArray
    y: FloatArray
    z_lower: FloatArray
    z_upper: FloatArray
    residuals: KKTResiduals


def _candidate(qp: ConvexQP, it: _Iterate, lo: IntArray, hi: IntArray) -> _Candidate:
    x = it.x.copy()
    if qp.splits is not None:
        plus, minus = qp.splits
        common = np.maximum(np.minimum(x[plus], x[minus]), 0.0)
        x[plus] -= common
        x[minus] -= common
    m0 = qp.G.shape[0]
    zs = np.maximum(it.z, 0.0)
    z_lower = np.zeros(qp.n)
    z_upper = np.zeros(qp.n)
    z_lower[lo] = zs[m0 : m0 + lo.size]
    z_upper[hi] = zs[m0 + lo.size :]
    z = zs[:m0]
    return _Candidate(x, z, it.y, z_lower, z_upper, kkt_residuals(qp, x, z, it.y, z_lower, z_upper))


def solve_qp(
    qp: ConvexQP,
    tol: float = 1e-8,
    x0: Optional[npt.ArrayLike] = None,
    max_iter: int = 100,
) -> QPSolution:
    """Solves ``qp``, which must be strictly convex on its feasible set.

    :param x0: starting primal point, it does not need to be feasible
    :raises InfeasibleError: if the constraints are infeasible
    :raises QPFailure: if the solver fails to reach ``tol``
    """
    G, h, lo, hi = qp.inequalities()
    start = None if x0 is None else np.asarray(x0, dtype=float)
    res = _interior_point(qp.Q, qp.q, G, h, qp.A, qp.b, start, tol, max_iter)
    best = _candidate(qp, res, lo, hi) if res.converged else None
    polished = _polish(qp.Q, qp.q, G, h, qp.A, qp.b, res)
    if polished is not None:
        cand = _candidate(qp, polished, lo, hi)
        bound = tol if best is None else max(max(best.residuals), tol * 1e-2)
        if max(cand.residuals) <= bound:
            best = cand
    if best is None:
        violation = _phase_one(G, h, qp.A, qp.b, tol, max_iter)
        scale = 1.0 + float(np.abs(h).max(initial=0.0))
        if violation is None or violation > 1e-7 * scale:
            raise InfeasibleError(
                "QP constraints are infeasible"
                + ("" if violation is None else f" (minimal violation {violation:.3g})")
            )
        raise QPFailure(f"QP solver did not converge in {max_iter} iterations")

    logger.debug("QP solved in %d iterations, residuals %s", res.iterations, best.residuals)
    return QPSolution(
        x=best.x,
        z=best.z,
        y=best.y,
        z_lower=best.z_lower,
        z_upper=best.z_upper,
        residuals=best.residuals,
        status="optimal",
        iterations=res.iterations,
        objective=qp.objective(best.x),
    )


def augment(
    qp: ConvexQP,
    *,
    quad: float = 0.0,
    linear: Optional[npt.ArrayLike] = None,
    G: Optional[npt.ArrayLike] = None,
    h: Optional[npt.ArrayLike] = None,
    lb: Optional[npt.ArrayLike] = None,
    ub: Optional[npt.ArrayLike] = None,
) -> ConvexQP:
    """Adds terms acting on the leading variables of ``qp``: ``quad / 2``
    times their squared norm, a linear term, inequality rows and bounds
    (intersected with the existing ones). The number of leading
    variables is given by whichever of the arguments is provided.
    """
    sizes = {
        np.shape(v)[-1] for v in (linear, G, lb, ub) if v is not None and np.size(v)
    }
    if len(sizes) > 1:
        raise ValueError(f"inconsistent leading dimensions {sorted(sizes)}")
    n0 = sizes.pop() if sizes else qp.n
    pad = qp.n - n0
    if pad < 0:
        raise ValueError(f"{n0} leading variables but the QP only has {qp.n}")

    Q = qp.Q
    if quad:
        Q = Q + sp.diags(np.concatenate([np.full(n0, quad), np.zeros(pad)]))
    q = qp.q.copy()
    if linear is not None:
        q[:n0] += np.asarray(linear, dtype=float)

    G_, h_ = qp.G, qp.h
    if G is not None:
        Gn = sp.csr_matrix(np.atleast_2d(np.asarray(G, dtype=float)))
        G_ = _vstack([G_, _hstack([Gn, sp.csr_matrix((Gn.shape[0], pad))], Gn.shape[0])], qp.n)
        h_ = np.concatenate([h_, np.asarray(h, dtype=float).reshape(-1)])

    lb_, ub_ = qp.lb.copy(), qp.ub.copy()
    if lb is not None:
        lb_[:n0] = np.maximum(lb_[:n0], lb)
    if ub is not None:
        ub_[:n0] = np.minimum(ub_[:n0], ub)
    return ConvexQP(Q, q, G_, h_, qp.A, qp.b, lb_, ub_, qp.splits)


def dump_triplets(qp: ConvexQP, fp: IO[str]) -> None:
    """Writes ``qp`` as plain-text sparse triplets.

    The first line holds ``n m k`` (variables, inequality and equality
    rows), then one entry per line: ``Q i j v``, ``q i v``, ``G i j v``,
    ``h i v``, ``A i j v``, ``b i v``, ``lb i v`` and ``ub i v``, with
    zero entries of vectors and infinite bounds omitted.
    """
    fp.write(f"{qp.n} {qp.G.shape[0]} {qp.A.shape[0]}\n")
    for name, m in (("Q", qp.Q), ("G", qp.G), ("A", qp.A)):
        coo = m.tocoo()
        for i, j, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
            fp.write(f"{name} {i} {j} {v!r}\n")
        vec = {"Q": qp.q, "G": qp.h, "A": qp.b}[name]
        label = {"Q": "q", "G": "h", "A": "b"}[name]
        for i in np.flatnonzero(vec):
            fp.write(f"{label} {i} {float(vec[i])!r}\n")
    for label, vec in (("lb", qp.lb), ("ub", qp.ub)):
        for i in np.flatnonzero(np.isfinite(vec)):
            fp.write(f"{label} {i} {float(vec[i])!r}\n")


@dataclass(frozen=True)
class Layout:
    """Positions of ``(b, b0, beta, sigma-, sigma+)`` in the variable
    vector of the empirical problem with ``p`` covariates, ``n``
    samples and ``m`` positive outcomes.
    """

    p: int
    n: int
    m: int

    @property
    def b(self) -> slice:
        return slice(0, self.p)

    @property
    def b0(self) -> int:
        return self.p

    @property
    def w(self) -> slice:
        return slice(0, self.p + 1)

    @property
    def beta(self) -> slice:
        return slice(self.p + 1, 2 * self.p + 1)

    @property
    def sigma_minus(self) -> slice:
        start = 2 * self.p + 1
        return slice(start, start + self.n)

    @property
    def sigma_plus(self) -> slice:
        start = 2 * self.p + 1 + self.n
        return slice(start, start + self.m)

    @property
    def size(self) -> int:
        return 2 * self.p + 1 + self.n + self.m


@dataclass(frozen=True, eq=False)
class SplitIngredients:
    """Data of a convex subproblem of the empirical problem.

    The convex part consists of the weighted ``l1`` penalties, the
    linear ``sigma`` terms and the squares ``(a_i + sigma-_i)^2 / (2 N pi_i)``
    where ``a_i = (1 - xi1) max(t_i, 0) + (xi2 - 1) max(-t_i, 0)`` and
    ``t_i = z_i - w . xhat_i``. Optionally an extra linear term, a
    proximal term ``prox / 2 |x - center|^2``, inequality rows
    ``rows[0] @ x <= rows[1]`` and the box ``[-box, box]`` on
    ``(b, b0, beta)`` complete the subproblem.
    """

    xhat: FloatArray
    z: FloatArray
    propensity: FloatArray
    xi1: float
    xi2: float
    plus_index: npt.NDArray[np.intp]
    lam_alloc: float = 0.0
    lam_rule: float = 0.0
    phi_alloc: Optional[FloatArray] = None
    phi_rule: Optional[FloatArray] = None
    linear: Optional[FloatArray] = None
    prox: float = 0.0
    center: Optional[FloatArray] = None
    rows: Optional[Tuple[FloatArray, FloatArray]] = None
    box: Optional[float] = None

    @property
    def layout(self) -> Layout:
        n, p1 = np.shape(self.xhat)
        return Layout(p1 - 1, n, len(self.plus_index))


def split_variables(ing: SplitIngredients) -> ConvexQP:
    """Lifts the subproblem to a QP over ``(x, t+, t-, b+, b-, beta+, beta-)``.

    ``t_i = t+_i - t-_i`` is tied to the data by one equality row per
    sample, and ``|b_k| = b+_k + b-_k`` (resp. ``beta``) by one equality
    row per penalised coefficient. Coefficient splits are only
    introduced for blocks with a positive penalty.
    """
    xhat = np.asarray(ing.xhat, dtype=float)
    n, p1 = xhat.shape
    p = p1 - 1
    if np.shape(ing.z) != (n,) or np.shape(ing.propensity) != (n,):
        raise ValueError("outcomes and propensities must have one entry per sample")
    lay = ing.layout
    n0 = lay.size

    tp = n0
    tm = n0 + n
    nv = n0 + 2 * n
    blocks = []
    for lam, phi, target in (
        (ing.lam_alloc, ing.phi_alloc, lay.b),
        (ing.lam_rule, ing.phi_rule, lay.beta),
    ):
        if lam > 0:
            weights = np.ones(p) if phi is None else np.asarray(phi, dtype=float)
            if weights.shape != (p,):
                raise ValueError(f"penalty weights must have {p} entries")
            blocks.append((lam * weights, target, nv))
            nv += 2 * p

    # quadratic bracket over (t+_i, t-_i, sigma-_i)
    scale = 1.0 / (n * np.asarray(ing.propensity, dtype=float))
    idx = np.stack([tp + np.arange(n), tm + np.arange(n), lay.sigma_minus.start + np.arange(n)])
    coef = np.array([1.0 - ing.xi1, ing.xi2 - 1.0, 1.0])
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(idx[i])
            cols.append(idx[j])
            vals.append(scale * coef[i] * coef[j])
    split_only = np.arange(n0, nv)
    rows.append(split_only)
    cols.append(split_only)
    vals.append(np.full(split_only.size, SPLIT_RIDGE))
    if ing.prox:
        rows.append(np.arange(n0))
        cols.append(np.arange(n0))
        vals.append(np.full(n0, ing.prox))
    Q = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv, nv),
    ).tocsr()

    z = np.asarray(ing.z, dtype=float)
    q = np.zeros(nv)
    q[lay.sigma_minus] = np.maximum(-z, 0.0) * scale
    if lay.m:
        plus = np.asarray(ing.plus_index)
        q[lay.sigma_plus] = -np.maximum(z[plus], 0.0) / (
            lay.m * np.asarray(ing.propensity, dtype=float)[plus]
        )
    for weights, _, start in blocks:
        q[start : start + 2 * p] = np.concatenate([weights, weights])
    if ing.linear is not None:
        q[:n0] += ing.linear
    if ing.prox:
        q[:n0] -= ing.prox * np.asarray(ing.center, dtype=float)

    # t+ - t- + w . xhat = z, then coef - coef+ + coef- = 0
    samples = np.arange(n)
    er = [np.repeat(samples, p1), samples, samples]
    ec = [np.tile(np.arange(p1), n), tp + samples, tm + samples]
    ev = [xhat.reshape(-1), np.ones(n), -np.ones(n)]
    eq_rhs = [z]
    row = n
    for _, target, start in blocks:
        k = np.arange(p)
        er += [row + k] * 3
        ec += [target.start + k, start + k, start + p + k]
        ev += [np.ones(p), -np.ones(p), np.ones(p)]
        eq_rhs.append(np.zeros(p))
        row += p
    A = sp.coo_matrix(
        (np.concatenate(ev), (np.concatenate(er), np.concatenate(ec))),
        shape=(row, nv),
    ).tocsr()

    lb = np.full(nv, -np.inf)
    ub = np.full(nv, np.inf)
    lb[n0:] = 0.0
    lb[lay.sigma_minus] = 0.0
    if ing.box is not None:
        for sl in (lay.w, lay.beta):
            lb[sl] = -ing.box
            ub[sl] = ing.box

    G = h = None
    if ing.rows is not None:
        G0, h = ing.rows
        G0m = sp.csr_matrix(np.atleast_2d(np.asarray(G0, dtype=float)))
        G = _hstack([G0m, sp.csr_matrix((G0m.shape[0], nv - n0))], G0m.shape[0])

    plus = [tp + samples] + [start + np.arange(p) for _, _, start in blocks]
    minus = [tm + samples] + [start + p + np.arange(p) for _, _, start in blocks]
    return ConvexQP(
        Q, q, G, h, A, np.concatenate(eq_rhs), lb, ub, (np.concatenate(plus), np.concatenate(minus))
    )


def consistent_split(ing: SplitIngredients, x: npt.ArrayLike) -> FloatArray:
    """Lifts ``x`` to the split variables with ``t+ t- = 0`` (and the
    same for coefficient splits), in the layout of
    :func:`split_variables`.
    """
    xs = np.asarray(x, dtype=float)
    lay = ing.layout
    t = np.asarray(ing.z, dtype=float) - np.asarray(ing.xhat, dtype=float) @ xs[lay.w]
    parts = [xs, np.maximum(t, 0.0), np.maximum(-t, 0.0)]
    for lam, target in ((ing.lam_alloc, lay.b), (ing.lam_rule, lay.beta)):
        if lam > 0:
            parts += [np.maximum(xs[target], 0.0), np.maximum(-xs[target], 0.0)]
    return np.concatenate(parts)
