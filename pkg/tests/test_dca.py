import json

import numpy as np
import pytest  # type: ignore

from idr_cde import InfeasibleError
from idr_cde.dca import (
    Polyhedron,
    Quadratic,
    ReverseConvexDCProgram,
    active_set,
    argmax_indices,
    check_a_stationarity,
    dc_step,
    default_prox,
    solve,
)
from idr_cde.epigraph import MaxAffineConstraint


def abs_at_least_one():
    """``min x^2 - 2x  s.t.  |x| >= 1``: global minimum at 1, spurious
    stationary point at -1.
    """
    return ReverseConvexDCProgram(
        dim=1,
        f=Quadratic([[2.0]], [0.0]),
        g=Quadratic([[0.0]], [2.0]),
        constraints=[MaxAffineConstraint([[1.0], [-1.0]], [-1.0, -1.0])],
    )


def test_argmax_indices():
    c = MaxAffineConstraint([[2.0, 1.0], [1.0, 0.0]], [-1.0, 0.0])
    assert argmax_indices(c, np.array([1.0, 0.0])) == [0, 1]
    assert argmax_indices(c, np.array([0.0, -1.0])) == [1]
    c = MaxAffineConstraint([[1.0], [-1.0]], [-1.0, -1.0])
    assert argmax_indices(c, np.array([2.0])) == [0]
    assert argmax_indices(c, np.array([1e-12]), eps_tie=1e-9) == [0, 1]
    with pytest.raises(ValueError, match="eps_tie"):
        argmax_indices(c, np.array([0.0]), eps_tie=-1)


def test_active_set():
    prog = abs_at_least_one()
    assert active_set(prog, np.array([1.0])) == [0]
    assert active_set(prog, np.array([2.0])) == []
    assert active_set(prog, np.array([1 + 1e-10]), eps_feas=1e-8) == [0]
    with pytest.raises(InfeasibleError):
        active_set(prog, np.array([0.5]))


@pytest.mark.parametrize(
    ("x", "expected"), [(2.0, 4 / 3), (4 / 3, 10 / 9), (1.0, 1.0), (-2.0, -1.0)]
)
def test_dc_step(x, expected):
    step = dc_step(abs_at_least_one(), np.array([x]), 1.0)
    assert step.x == pytest.approx([expected], abs=1e-7)


def test_dc_step_forced_piece():
    # from 2, using the piece x <= -1 instead of the active x >= 1
    step = dc_step(abs_at_least_one(), np.array([2.0]), 1.0, choice=[1])
    assert step.choice == (1,)
    assert step.x == pytest.approx([-1.0], abs=1e-7)
    with pytest.raises(ValueError, match="pieces"):
        dc_step(abs_at_least_one(), np.array([2.0]), 1.0, choice=[0, 1])
    with pytest.raises(ValueError, match="proximal"):
        dc_step(abs_at_least_one(), np.array([2.0]), 0.0)


def test_solve_to_global():
    x, trace = solve(abs_at_least_one(), [2.0], 1.0, eps_step=1e-8)
    assert x == pytest.approx([1.0], abs=1e-6)
    assert trace.objective == pytest.approx(-1.0, abs=1e-6)
    assert trace.converged
    assert trace.iterations == len(trace.choices) == len(trace.iterates) - 1
    assert all(choice == (0,) for choice in trace.choices)


def test_solve_to_spurious():
    x, trace = solve(abs_at_least_one(), [-2.0], 1.0, eps_step=1e-8)
    assert x == pytest.approx([-1.0], abs=1e-6)
    assert trace.objective == pytest.approx(3.0, abs=1e-6)


def test_solve_from_stationary():
    x, trace = solve(abs_at_least_one(), [1.0], 1.0)
    assert trace.iterations <= 1
    assert x == pytest.approx([1.0], abs=1e-7)


def test_proximal_descent():
    prog = abs_at_least_one()
    c = 0.5
    _, trace = solve(prog, [3.0], c, eps_step=1e-9)
    for k in range(trace.iterations):
        gap = 0.5 * c * float(np.sum((trace.iterates[k + 1] - trace.iterates[k]) ** 2))
        assert trace.objectives[k + 1] + gap <= trace.objectives[k] + 1e-7


def test_solve_iteration_limit(caplog):
    _, trace = solve(abs_at_least_one(), [5.0], 1.0, eps_step=0.0, max_iter=3)
    assert not trace.converged
    assert trace.iterations == 3
    assert "stopped after 3 iterations" in caplog.text


def test_solve_invalid_start():
    with pytest.raises(InfeasibleError):
        solve(abs_at_least_one(), [0.0])
    with pytest.raises(ValueError, match="shape"):
        solve(abs_at_least_one(), [1.0, 2.0])


def test_default_prox():
    prog = abs_at_least_one()
    assert default_prox(prog, np.array([1.0])) == pytest.approx(3e-4)
    _, trace = solve(prog, [1.0])
    assert trace.prox == pytest.approx(3e-4)


@pytest.mark.parametrize(("x", "certified"), [(1.0, True), (-1.0, True), (2.0, False)])
def test_a_stationarity(x, certified):
    cert = check_a_stationarity(abs_at_least_one(), [x])
    assert bool(cert) is certified
    assert not cert.partial
    if certified:
        assert cert.choice == ((0,) if x > 0 else (1,))


def test_a_stationarity_partial():
    """Seven constraints ``|x| >= 0`` tied at 0 make 128 active tuples."""
    prog = ReverseConvexDCProgram(
        dim=1,
        f=Quadratic([[2.0]], [0.0]),
        g=Quadratic([[0.0]], [0.0]),
        constraints=[MaxAffineConstraint([[1.0], [-1.0]], [0.0, 0.0])] * 7,
    )
    cert = check_a_stationarity(prog, [0.0])
    assert cert.certified
    assert cert.partial
    assert cert.tuples_checked == 1
    assert check_a_stationarity(prog, [0.0], cap=128).tuples_checked == 1


def test_a_stationarity_enumerates():
    """At 0 the piece x >= 0 does not certify, x <= 0 does."""
    prog = ReverseConvexDCProgram(
        dim=1,
        f=Quadratic([[2.0]], [-2.0]),
        g=Quadratic([[0.0]], [0.0]),
        constraints=[MaxAffineConstraint([[1.0], [-1.0]], [0.0, 0.0])],
    )
    cert = check_a_stationarity(prog, [0.0])
    assert cert.certified
    assert cert.choice == (1,)
    assert cert.tuples_checked == 2


def test_domain():
    prog = ReverseConvexDCProgram(
        dim=2,
        f=Quadratic(np.eye(2), [0.0, 0.0]),
        g=Quadratic(np.zeros((2, 2)), [1.0, 1.0]),
        constraints=[MaxAffineConstraint([[1.0, 1.0]], [-1.0])],
        domain=Polyhedron(G=np.array([[1.0, -1.0]]), h=np.array([0.0]), ub=np.array([0.25, 5.0])),
    )
    x, _ = solve(prog, [0.25, 0.75], 1.0, eps_step=1e-8)
    assert x == pytest.approx([0.25, 1.0], abs=1e-6)
    assert prog.infeasibility(x) <= 1e-7
    assert prog.domain.violation(np.array([1.0, 0.0])) == pytest.approx(1.0)


def test_program_dimensions():
    with pytest.raises(ValueError, match="constraint 0"):
        ReverseConvexDCProgram(
            dim=2,
            f=Quadratic(np.eye(2), [0.0, 0.0]),
            g=Quadratic(np.zeros((2, 2)), [0.0, 0.0]),
            constraints=[MaxAffineConstraint([[1.0]], [0.0])],
        )


def test_trace_json():
    _, trace = solve(abs_at_least_one(), [2.0], 1.0, max_iter=2, eps_step=0.0)
    d = json.loads(trace.to_json())
    assert d["prox"] == 1.0
    assert d["initial_objective"] == 0.0
    assert [it["iteration"] for it in d["iterations"]] == [1, 2]
    assert d["iterations"][0]["tuple"] == [0]
    assert d["iterations"][0]["objective"] == pytest.approx(16 / 9 - 8 / 3)
    assert d["stop_reason"] == "max_iter"


def test_solve_stop_reasons():
    _, trace = solve(abs_at_least_one(), [2.0], 1.0, eps_step=1e-8)
    assert trace.stop_reason == "step"
    _, loose = solve(abs_at_least_one(), [2.0], 1.0, eps_step=1e-8, eps_obj=1e-3)
    assert loose.stop_reason == "objective"
    assert loose.converged
    assert loose.iterations < trace.iterations
    # the last accepted step decreased the objective by at most 1e-3 (1 + |h|)
    assert loose.objectives[-2] - loose.objectives[-1] <= 1e-3 * (1 + abs(loose.objectives[-2]))
    with pytest.raises(ValueError, match="eps_obj"):
        solve(abs_at_least_one(), [2.0], 1.0, eps_obj=-1.0)


def test_solve_rejects_ascent(monkeypatch, caplog):
    """A subproblem solution increasing the objective is re-solved once,
    then dropped and the run stops at the current point.
    """
    import idr_cde.dca as dca

    calls = []

    def uphill(prog, x, c, choice=None, **kwargs):
        calls.append(kwargs["qp_tol"])
        return dca.Step(x + 1.0, (0,), dca_step(prog, x, c).qp)

    dca_step = dca.dc_step
    monkeypatch.setattr(dca, "dc_step", uphill)
    caplog.set_level("INFO", logger="idr_cde.dca")
    x, trace = dca.solve(abs_at_least_one(), [2.0], 1.0, qp_tol=1e-8)
    assert calls == pytest.approx([1e-8, 1e-10])
    assert trace.stop_reason == "stalled"
    assert trace.converged
    assert trace.iterations == 0
    assert list(x) == [2.0]
    assert "no verified descent" in caplog.text


def test_solve_rejects_infeasible_step(monkeypatch):
    import idr_cde.dca as dca

    dca_step = dca.dc_step

    def into_hole(prog, x, c, choice=None, **kwargs):
        # from 2, a step into |x| < 1 lowers x^2 - 2x
        return dca.Step(np.array([0.9]), (0,), dca_step(prog, x, c).qp)

    monkeypatch.setattr(dca, "dc_step", into_hole)
    x, trace = dca.solve(abs_at_least_one(), [2.0], 1.0)
    assert trace.stop_reason == "stalled"
    assert list(x) == [2.0]


def test_a_stationarity_absolute_tolerance():
    """``10^6 (x^2 - 2x)`` at 1.0005: the linearised program improves on
    the objective by 0.25, which a tolerance of 1e-6 relative to
    ``1 + |h|`` would accept.
    """
    prog = ReverseConvexDCProgram(
        dim=1,
        f=Quadratic([[2e6]], [0.0]),
        g=Quadratic([[0.0]], [2e6]),
        constraints=[MaxAffineConstraint([[1.0], [-1.0]], [-1.0, -1.0])],
    )
    assert not check_a_stationarity(prog, [1.0005])
    assert check_a_stationarity(prog, [1.0])
