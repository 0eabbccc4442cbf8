import itertools

import numpy as np
import pytest  # type: ignore

from idr_cde.epigraph import (
    DCConstraint,
    MaxAffineConstraint,
    epi_violation,
    epigraph_constraint,
    expand_to_reverse_convex,
    hypo_violation,
    hypograph_constraint,
)

GRID = np.round(np.linspace(-2, 2, 41), 12)


@pytest.mark.parametrize(
    ("t", "s", "expected"),
    [(1, 0.5, 0), (0, -1, 0), (0, 0.5, 0.5), (2, 3, -1)],
)
def test_epi_violation(t, s, expected):
    assert epi_violation(t, s) == pytest.approx(expected)


@pytest.mark.parametrize(
    ("t", "s", "expected"),
    [(1, 0, 0), (1, -0.5, 0.5), (-3, -1, -3)],
)
def test_hypo_violation(t, s, expected):
    assert hypo_violation(t, s) == pytest.approx(expected)


def test_epigraph_is_indicator_graph():
    """Members of the epigraph with ``t`` in [0, 1] are exactly the
    points above the indicator ``1(s > 0)``.
    """
    for t, s in itertools.product(np.linspace(0, 1, 21), GRID):
        assert (epi_violation(t, s) <= 1e-12) == (t >= (1.0 if s > 0 else 0.0))
        assert (hypo_violation(t, s) <= 1e-12) == (t <= (1.0 if s >= 0 else 0.0))


def test_violation_vectorised():
    t, s = np.meshgrid(GRID, GRID)
    v = epi_violation(t, s)
    assert v.shape == t.shape
    assert v[3, 7] == epi_violation(t[3, 7], s[3, 7])


def _pieces(cs):
    return [(c.coef.tolist(), c.offset.tolist()) for c in cs]


def test_expand_epigraph():
    cs = expand_to_reverse_convex(epigraph_constraint())
    assert _pieces(cs) == [
        ([[2.0, 1.0], [1.0, 0.0]], [-1.0, 0.0]),
        ([[1.0, 0.0], [0.0, -1.0]], [-1.0, 0.0]),
    ]


def test_expand_hypograph():
    cs = expand_to_reverse_convex(hypograph_constraint())
    assert _pieces(cs) == [
        ([[-2.0, -1.0], [-1.0, 0.0]], [1.0, 1.0]),
        ([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
    ]


@pytest.mark.parametrize("make", [epigraph_constraint, hypograph_constraint])
def test_expansion_equivalent(make):
    c = make()
    cs = expand_to_reverse_convex(c)
    for x in itertools.product(GRID, GRID):
        v = c.violation(x)
        assert v == pytest.approx(-min(r(x) for r in cs), abs=1e-12)
        if abs(v) > 1e-9:
            assert (v < 0) == all(r(x) > 0 for r in cs)


def test_expand_single_plus_term():
    c = DCConstraint(plus=([1.0, 0.0], [0.5]), minus=([[0.0, 1.0], [1.0, 1.0]], [0.0, -1.0]))
    (r,) = expand_to_reverse_convex(c)
    assert r.coef.tolist() == [[-1.0, 1.0], [0.0, 1.0]]
    assert r.offset.tolist() == [-0.5, -1.5]


def test_max_affine():
    c = MaxAffineConstraint([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])
    assert (c.dim, len(c)) == (2, 2)
    assert list(c.terms([2.0, 5.0])) == [1.0, -3.0]
    assert c([0.0, 0.0]) == -1.0
    assert not c.satisfied([0.5, 0.0])
    assert c.satisfied([1.0 - 1e-10, 0.0], eps=1e-8)


def test_pullback():
    c = MaxAffineConstraint([[2.0, 1.0], [1.0, 0.0]], [-1.0, 0.0])
    # (t, s) = (z[2], 3 z[0] - 1)
    m = np.array([[0.0, 0.0, 1.0], [3.0, 0.0, 0.0]])
    m0 = np.array([0.0, -1.0])
    pulled = c.pullback(m, m0)
    rng = np.random.default_rng(1)
    for z in rng.normal(size=(20, 3)):
        assert pulled(z) == pytest.approx(c(m @ z + m0))


@pytest.mark.parametrize(
    ("coef", "offset", "match"),
    [
        (np.zeros((0, 2)), [], "at least one"),
        ([[1.0, 0.0]], [0.0, 1.0], "offsets"),
        ([[np.inf, 0.0]], [0.0], "finite"),
    ],
)
def test_max_affine_invalid(coef, offset, match):
    with pytest.raises(ValueError, match=match):
        MaxAffineConstraint(coef, offset)


def test_dc_dimensions():
    with pytest.raises(ValueError, match="dimensions"):
        DCConstraint(plus=([1.0], [0.0]), minus=([1.0, 0.0], [0.0]))
