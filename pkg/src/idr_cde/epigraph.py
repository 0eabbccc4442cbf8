"""Piecewise-affine encodings of the indicator graphs, and the
expansion of ``max - max <= 0`` constraints into reverse-convex
``max >= 0`` constraints.

The lower semicontinuous indicator ``1(s > 0)`` is the boundary of

    {(t, s) : max(-t, s) - max(t + s - 1, 0) <= 0}    (epigraph)

and the upper semicontinuous ``1(s >= 0)`` the boundary of

    {(t, s) : max(t + s - 1, 0) - max(-t, s) <= 0}    (hypograph)

Each such DC constraint is equivalent to one ``max >= 0`` constraint
per term of its convex (left) part.
"""

from __future__ import annotations

__all__ = [
    "DCConstraint",
    "MaxAffineConstraint",
    "epi_violation",
    "epigraph_constraint",
    "expand_to_reverse_convex",
    "hypo_violation",
    "hypograph_constraint",
]

from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
Real = Union[float, FloatArray]


def epi_violation(t: Real, s: Real) -> Real:
    """``max(-t, s) - max(t + s - 1, 0)``, nonpositive iff
    ``t >= 1(s > 0)``.
    """
    return np.maximum(np.negative(t), s) - np.maximum(np.add(t, s) - 1, 0)  # type: ignore[no-any-return]


def hypo_violation(t: Real, s: Real) -> Real:
    """``max(t + s - 1, 0) - max(-t, s)``, nonpositive iff
    ``t <= 1(s >= 0)``.
    """
    return np.maximum(np.add(t, s) - 1, 0) - np.maximum(np.negative(t), s)  # type: ignore[no-any-return]


def _terms(
    coef: npt.ArrayLike, offset: npt.ArrayLike
) -> Tuple[FloatArray, FloatArray]:
    c = np.array(coef, dtype=float)
    if c.ndim == 1:
        c = c[None, :]
    o = np.array(offset, dtype=float).reshape(-1)
    if c.ndim != 2 or c.shape[0] == 0:
        raise ValueError("a max-affine function needs at least one term")
    if o.shape != (c.shape[0],):
        raise ValueError(f"{c.shape[0]} terms but {o.shape[0]} offsets")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(o))):
        raise ValueError("max-affine terms must be finite")
    c.setflags(write=False)
    o.setflags(write=False)
    return c, o


@dataclass(frozen=True, eq=False)
class MaxAffineConstraint:
    """Reverse-convex constraint ``max_j (coef[j] . x + offset[j]) >= 0``."""

    __slots__ = ("coef", "offset")
    coef: FloatArray
    offset: FloatArray

    def __init__(self, coef: npt.ArrayLike, offset: npt.ArrayLike) -> None:
        c, o = _terms(coef, offset)
        object.__setattr__(self, "coef", c)
        object.__setattr__(self, "offset", o)

    @property
    def dim(self) -> int:
        return int(self.coef.shape[1])

    def __len__(self) -> int:
        return int(self.coef.shape[0])

    def terms(self, x: npt.ArrayLike) -> FloatArray:
        """Values of every affine piece at ``x``."""
        return np.asarray(self.coef @ np.asarray(x, dtype=float) + self.offset)

    def __call__(self, x: npt.ArrayLike) -> float:
        return float(self.terms(x).max())

    def satisfied(self, x: npt.ArrayLike, eps: float = 0.0) -> bool:
        return self(x) >= -eps

    def pullback(self, m: npt.ArrayLike, m0: npt.ArrayLike) -> MaxAffineConstraint:
        """The constraint in terms of ``z`` where ``x = m @ z + m0``."""
        mm = np.asarray(m, dtype=float)
        return MaxAffineConstraint(
            self.coef @ mm, self.offset + self.coef @ np.asarray(m0, dtype=float)
        )


@dataclass(frozen=True, eq=False)
class DCConstraint:
    """``max_j plus_j(x) - max_k minus_k(x) <= 0`` with affine pieces."""

    __slots__ = ("minus_coef", "minus_offset", "plus_coef", "plus_offset")
    plus_coef: FloatArray
    plus_offset: FloatArray
    minus_coef: FloatArray
    minus_offset: FloatArray

    def __init__(
        self,
        plus: Tuple[npt.ArrayLike, npt.ArrayLike],
        minus: Tuple[npt.ArrayLike, npt.ArrayLike],
    ) -> None:
        pc, po = _terms(*plus)
        mc, mo = _terms(*minus)
        if pc.shape[1] != mc.shape[1]:
            raise ValueError("plus and minus terms act on different dimensions")
        object.__setattr__(self, "plus_coef", pc)
        object.__setattr__(self, "plus_offset", po)
        object.__setattr__(self, "minus_coef", mc)
        object.__setattr__(self, "minus_offset", mo)

    def violation(self, x: npt.ArrayLike) -> float:
        xs = np.asarray(x, dtype=float)
        return float(
            (self.plus_coef @ xs + self.plus_offset).max()
            - (self.minus_coef @ xs + self.minus_offset).max()
        )


def expand_to_reverse_convex(c: DCConstraint) -> List[MaxAffineConstraint]:
    """One constraint per plus term ``j``: ``max_k (minus_k - plus_j) >= 0``.

    ``max_j p_j <= max_k m_k`` holds iff every ``p_j`` is below the
    right-hand side, so the conjunction is equivalent to ``c``.
    """
    return [
        MaxAffineConstraint(c.minus_coef - pc, c.minus_offset - po)
        for pc, po in zip(c.plus_coef, c.plus_offset)
    ]


def epigraph_constraint() -> DCConstraint:
    """``max(-t, s) - max(t + s - 1, 0) <= 0`` over ``(t, s)``."""
    return DCConstraint(
        plus=([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
        minus=([[1.0, 1.0], [0.0, 0.0]], [-1.0, 0.0]),
    )


def hypograph_constraint() -> DCConstraint:
    """``max(t + s - 1, 0) - max(-t, s) <= 0`` over ``(t, s)``."""
    return DCConstraint(
        plus=([[1.0, 1.0], [0.0, 0.0]], [-1.0, 0.0]),
        minus=([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
    )
