import numpy as np
import pytest  # type: ignore

from idr_cde import Dataset
from idr_cde.baselines import (
    dlearn_design,
    fit_dlearn,
    fit_l1pls,
    fit_penalized_ls,
    l1pls_design,
    select_lambda,
)


def interaction_data(n=60, p=2, seed=3, effect=None):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, p))
    a = rng.choice([-1.0, 1.0], size=n)
    z = a * (x[:, 0] if effect is None else effect)
    return Dataset(x, a, z)


def test_single_sample():
    c = fit_penalized_ls([[1.0, 2.0]], [3.0])
    assert np.array([1.0, 2.0]) @ c == pytest.approx(3.0, abs=1e-7)


def test_least_squares():
    rng = np.random.default_rng(0)
    d = np.hstack([rng.normal(size=(30, 3)), np.ones((30, 1))])
    y = rng.normal(size=30)
    w = rng.uniform(0.5, 2.0, size=30)
    c = fit_penalized_ls(d, y, w)
    sw = np.sqrt(w)
    expected = np.linalg.lstsq(d * sw[:, None], y * sw, rcond=None)[0]
    assert c == pytest.approx(expected, abs=1e-6)


def test_lasso_optimality():
    rng = np.random.default_rng(1)
    d = rng.normal(size=(40, 5))
    y = d[:, 0] * 2 - d[:, 3] + rng.normal(size=40) * 0.1
    lam = 0.3
    c = fit_penalized_ls(d, y, lam=lam)
    grad = -(d.T @ (y - d @ c)) / 40
    for j in range(5):
        if c[j] != 0:
            assert grad[j] == pytest.approx(-lam * np.sign(c[j]), abs=1e-7)
        else:
            assert abs(grad[j]) <= lam + 1e-7
    assert c[1] == c[2] == c[4] == 0


def test_large_penalty():
    rng = np.random.default_rng(2)
    d = np.hstack([rng.normal(size=(20, 2)), np.ones((20, 1))])
    y = rng.normal(size=20) + 5
    w = rng.uniform(0.5, 2.0, size=20)
    c = fit_penalized_ls(d, y, w, lam=1e6, mask=[True, True, False])
    assert list(c[:2]) == [0.0, 0.0]
    assert c[2] == pytest.approx(np.average(y, weights=w))


def test_zero_variance_column():
    d = np.array([[1.0, 1.0], [2.0, 1.0], [3.0, 1.0]])
    with pytest.warns(RuntimeWarning, match="column 1 has zero variance"):
        c = fit_penalized_ls(d, [1.0, 2.0, 3.0], lam=0.01)
    assert c[1] == 0.0
    # unpenalised constant columns are kept
    c = fit_penalized_ls(d, [2.0, 3.0, 4.0], mask=[True, False])
    assert c == pytest.approx([1.0, 1.0], abs=1e-6)


@pytest.mark.parametrize(
    ("kwargs", "match"),
    [
        ({"response": [1.0]}, "response"),
        ({"weights": [1.0, -1.0]}, "weights"),
        ({"mask": [True]}, "mask"),
        ({"lam": -1.0}, "lam"),
    ],
)
def test_invalid(kwargs, match):
    args = {"design": [[1.0], [2.0]], "response": [1.0, 2.0]} | kwargs
    with pytest.raises(ValueError, match=match):
        fit_penalized_ls(**args)


def test_designs():
    assert l1pls_design([[2.0, 3.0]], [-1.0]).tolist() == [[1.0, 2.0, 3.0, -1.0, -2.0, -3.0]]
    assert dlearn_design([[2.0, 3.0]]).tolist() == [[2.0, 3.0, 1.0]]


@pytest.mark.parametrize("fitter", [fit_l1pls, fit_dlearn])
def test_pure_interaction(fitter):
    rule = fitter(interaction_data(), 0.0)
    assert rule.beta == pytest.approx([1.0, 0.0], abs=1e-5)
    assert rule.intercept == pytest.approx(0.0, abs=1e-5)
    x = np.random.default_rng(9).uniform(-1, 1, size=(100, 2))
    x = x[np.abs(x[:, 0]) > 1e-3]
    assert list(rule(x)) == list(np.sign(x[:, 0]))


@pytest.mark.parametrize("fitter", [fit_l1pls, fit_dlearn])
def test_constant_effect(fitter):
    rule = fitter(interaction_data(effect=1.0), 0.01)
    x = np.random.default_rng(4).normal(size=(20, 2))
    assert set(rule(x).tolist()) == {1.0}


def test_dlearn_weights():
    """Samples with a small propensity weigh more."""
    x = np.array([[0.0], [0.0]])
    d = Dataset(x, [1.0, 1.0], [1.0, -1.0], [0.1, 0.9])
    assert fit_dlearn(d, 0.0).intercept == pytest.approx((10 - 1 / 0.9) / (10 + 1 / 0.9))


def test_select_lambda():
    d = interaction_data(n=40)
    assert select_lambda("dlearn", d, grid=(1.0, 0.0, 0.5)) == 0.0
    assert select_lambda("l1pls", d, grid=(0.0, 1.0), k=5) == 0.0
    # equal errors go to the smaller penalty
    flat = Dataset(d.x, d.a, np.zeros(d.n))
    assert select_lambda("dlearn", flat, grid=(0.2, 0.1)) == 0.1
    with pytest.raises(ValueError, match="unknown"):
        select_lambda("rwl", d)
    with pytest.raises(ValueError, match="empty"):
        select_lambda("dlearn", d, grid=())
