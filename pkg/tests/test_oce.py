import numpy as np
import pytest  # type: ignore

from idr_cde import ConfigError, UtilitySpec
from idr_cde.oce import (
    SampleSet,
    cvar_level,
    empirical_cvar,
    empirical_oce,
    empirical_quantile,
    explicit_optimal_action,
    mean_variance_oce,
    piecewise_linear_oce,
)

PW = UtilitySpec.piecewise_linear(0, 2)


def grid_oce(values, u, num=20001):
    """Brute force ``sup_eta eta + E u(Z - eta)`` over a fine grid."""
    z = np.asarray(values, dtype=float)
    etas = np.linspace(z.min() - 1, z.max() + 1, num)
    return max(float(e + np.mean(u(z - e))) for e in etas)


def test_sample_set():
    s = SampleSet([3, 1, 2], [1, 1, 2])
    assert list(s.values) == [1, 2, 3]
    assert list(s.weights) == [0.25, 0.5, 0.25]
    assert s.mean == 2.0
    assert s.variance == 0.5
    assert list((s + 1).values) == [2, 3, 4]
    assert len(s) == 3


@pytest.mark.parametrize(
    ("values", "weights", "match"),
    [
        ([], None, "empty"),
        ([1.0, np.nan], None, "finite"),
        ([1.0, 2.0], [1.0], "lengths"),
        ([1.0, 2.0], [1.0, 0.0], "positive"),
    ],
)
def test_sample_set_invalid(values, weights, match):
    with pytest.raises(ValueError, match=match):
        SampleSet(values, weights)


@pytest.mark.parametrize(
    ("values", "gamma", "expected"),
    [
        ([1, 2, 3, 4], 0.5, 2),
        ([4, 3, 2, 1], 0.25, 1),
        ([1, 2, 3, 4], 0.26, 2),
        ([5], 0.3, 5),
        ([1, 1, 1], 0.9, 1),
    ],
)
def test_quantile(values, gamma, expected):
    assert empirical_quantile(SampleSet(values), gamma) == expected


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.5])
def test_quantile_level(gamma):
    with pytest.raises(ValueError, match="level"):
        empirical_quantile(SampleSet([1.0]), gamma)


def test_cvar():
    s = SampleSet([1, 2, 3, 4])
    assert empirical_cvar(s, 0.5) == pytest.approx(1.5)
    assert empirical_cvar(s, 0.999999) == pytest.approx(2.5, abs=1e-5)
    assert empirical_cvar(SampleSet([7.5] * 4), 0.2) == pytest.approx(7.5)


def test_oce_piecewise():
    res = empirical_oce(SampleSet([1, 2, 3, 4]), PW)
    assert res.value == pytest.approx(1.5)
    # maximisers are [2, 3], the smallest is reported
    assert res.eta == 2.0


def test_oce_identity():
    assert empirical_oce(SampleSet([1, 2, 3, 4]), UtilitySpec.identity()).value == 2.5


@pytest.mark.parametrize(
    "u", [UtilitySpec.identity(), PW, UtilitySpec.truncated_quadratic(1.5)]
)
def test_oce_zero(u):
    assert empirical_oce(SampleSet([0.0, 0.0, 0.0]), u).value == pytest.approx(0.0)


@pytest.mark.parametrize(
    "u",
    [
        PW,
        UtilitySpec.piecewise_linear(0.3, 5),
        UtilitySpec.truncated_quadratic(0.7),
        UtilitySpec.truncated_quadratic(50),
    ],
)
def test_oce_grid_oracle(u):
    rng = np.random.default_rng(11)
    for _ in range(10):
        values = rng.normal(size=rng.integers(1, 12))
        assert empirical_oce(SampleSet(values), u).value == pytest.approx(
            grid_oce(values, u), abs=1e-3
        )


def test_oce_translation():
    """Adding a constant shifts the certainty equivalent by that constant."""
    s = SampleSet([0.5, -1.0, 2.0, 3.5])
    for u in (PW, UtilitySpec.truncated_quadratic(2)):
        assert empirical_oce(s + 3, u).value == pytest.approx(
            empirical_oce(s, u).value + 3
        )


def test_oce_bounds():
    s = SampleSet([1, 2])
    with pytest.raises(ValueError, match="sample range"):
        empirical_oce(s, PW, (1.5, 3))
    assert empirical_oce(s, UtilitySpec.identity(), (0, 3)) == (1.5, 0)


def test_piecewise_linear_closed_form():
    rng = np.random.default_rng(5)
    u = UtilitySpec.piecewise_linear(0.25, 3)
    assert cvar_level(u) == pytest.approx(0.75 / 2.75)
    for _ in range(10):
        s = SampleSet(rng.exponential(size=9))
        assert piecewise_linear_oce(s, u) == pytest.approx(empirical_oce(s, u).value)
    with pytest.raises(ConfigError):
        cvar_level(UtilitySpec.identity())


def test_mean_variance():
    assert mean_variance_oce(SampleSet([1, 3]), 2) == pytest.approx(1.75)
    assert mean_variance_oce(SampleSet([4, 4]), 0.1) == 4
    assert mean_variance_oce(SampleSet([0, 2, 4]), 4) == pytest.approx(2 - 1 / 3)
    with pytest.raises(ValueError, match="range"):
        mean_variance_oce(SampleSet([0, 2, 4]), 3)


def test_mean_variance_matches_oce():
    s = SampleSet([0, 2, 4])
    assert empirical_oce(s, UtilitySpec.truncated_quadratic(4)).value == pytest.approx(
        mean_variance_oce(s, 4)
    )


def test_explicit_optimal_action():
    identity = UtilitySpec.identity()
    assert (
        explicit_optimal_action({1: SampleSet([3]), -1: SampleSet([1])}, identity) == 1
    )
    assert (
        explicit_optimal_action({1: SampleSet([0, 10]), -1: SampleSet([4, 4])}, PW)
        == -1
    )
    # the mean prefers the risky action
    assert (
        explicit_optimal_action({1: SampleSet([0, 10]), -1: SampleSet([4, 4])}, identity)
        == 1
    )
    s = SampleSet([1, 2])
    assert explicit_optimal_action({1: s, -1: s}, PW) == 1
    with pytest.raises(ValueError, match="missing"):
        explicit_optimal_action({1: s}, PW)


def random_sample(rng, size=None):
    n = int(rng.integers(1, 30)) if size is None else size
    values = rng.normal(size=n) * rng.choice([0.1, 1.0, 10.0])
    weights = rng.uniform(0.1, 1.0, size=n) if rng.random() < 0.5 else None
    return values, weights


def random_utility(rng):
    if rng.random() < 0.7:
        return UtilitySpec.piecewise_linear(rng.uniform(0, 0.9), rng.uniform(1.1, 5))
    return UtilitySpec.truncated_quadratic(rng.uniform(0.1, 5))


def test_cvar_matches_oce_and_sample_oracle():
    rng = np.random.default_rng(41)
    for _ in range(1000):
        values, weights = random_sample(rng)
        s = SampleSet(values, weights)
        gamma = rng.uniform(0.05, 0.95)
        # the supremum is attained at a sample point
        oracle = max(
            float(e - s.weights @ np.maximum(e - s.values, 0.0) / gamma) for e in s.values
        )
        cvar = empirical_cvar(s, gamma)
        assert cvar == pytest.approx(oracle, abs=1e-9)
        oce = empirical_oce(s, UtilitySpec.piecewise_linear(0.0, 1 / gamma)).value
        assert oce == pytest.approx(cvar, abs=1e-9)


def test_oce_shift_additive_and_monotone():
    rng = np.random.default_rng(43)
    for _ in range(1000):
        u = random_utility(rng)
        tol = 1e-9 if u.kind == "piecewise_linear" else 1e-7
        values, weights = random_sample(rng)
        s = SampleSet(values, weights)
        base = empirical_oce(s, u).value
        k = rng.normal() * 5
        assert empirical_oce(s + k, u).value == pytest.approx(base + k, abs=tol)
        higher = SampleSet(values + rng.exponential(size=values.size), weights)
        assert empirical_oce(higher, u).value >= base - tol


def test_oce_concave_and_below_mean():
    rng = np.random.default_rng(47)
    for _ in range(1000):
        u = random_utility(rng)
        tol = 1e-9 if u.kind == "piecewise_linear" else 1e-7
        n = int(rng.integers(1, 30))
        a, weights = random_sample(rng, n)
        b, _ = random_sample(rng, n)
        lam = rng.uniform()
        mixed = empirical_oce(SampleSet(lam * a + (1 - lam) * b, weights), u).value
        sa, sb = SampleSet(a, weights), SampleSet(b, weights)
        assert mixed >= lam * empirical_oce(sa, u).value + (1 - lam) * empirical_oce(sb, u).value - tol
        assert empirical_oce(sa, u).value <= sa.mean + tol
