import dataclasses
import io
import json
import math
import os
import time

import numpy as np
import pytest  # type: ignore

from idr_cde import (
    BenchConfig,
    ConfigError,
    Dataset,
    ScenarioSpec,
    SolverError,
    run_benchmark,
    simulate,
)
from idr_cde.bench import (
    METHODS,
    dlearn_method,
    idr_cde_method,
    oracle_method,
    random_method,
    true_rule,
)
from idr_cde.evaluation import empirical_value

slow = pytest.mark.skipif(
    not os.environ.get("IDR_CDE_SLOW"), reason="set IDR_CDE_SLOW to run replication studies"
)


def test_simulate_deterministic():
    s = ScenarioSpec(1, 50, 4, seed=7)
    d1, d2 = simulate(s), simulate(s)
    for field in ("x", "a", "z", "propensity"):
        assert np.array_equal(getattr(d1, field), getattr(d2, field))
    assert not np.array_equal(simulate(s, (0, 1)).z, d1.z)
    assert not np.array_equal(simulate(ScenarioSpec(1, 50, 4, seed=8)).z, d1.z)


@pytest.mark.parametrize("scenario", [1, 2, 3])
def test_simulate_distribution(scenario):
    d = simulate(ScenarioSpec(scenario, 2000, 5, seed=3))
    assert d.x.shape == (2000, 5)
    assert np.all(np.abs(d.x) <= 1)
    assert set(np.unique(d.a)) == {-1.0, 1.0}
    assert 0.45 < np.mean(d.a == 1) < 0.55
    assert np.all(d.propensity == 0.5)
    x = d.x
    eps = d.z - (1 + x[:, 0] + x[:, 1] + (0.5 + x[:, 0] - x[:, 1] + x[:, 2]) * d.a)
    if scenario == 2:
        assert np.all(eps >= 0)
    else:
        assert np.all(eps > 0)
    assert d.checked() is d


@pytest.mark.parametrize(
    ("kwargs", "match"),
    [
        ({"scenario": 4, "n": 10}, "scenario"),
        ({"scenario": 1, "n": 10, "p": 2}, "p >= 3"),
        ({"scenario": 1, "n": 0}, "n must"),
        ({"scenario": 1, "n": 10, "seed": -1}, "seed"),
    ],
)
def test_scenario_invalid(kwargs, match):
    with pytest.raises(ConfigError, match=match):
        ScenarioSpec(**kwargs)


def test_true_rule():
    x = np.array([[0.0, 0.0, 0.0, 0.9], [0.0, 1.0, 0.0, 0.0], [-0.5, 0.0, 0.0, 0.0]])
    assert list(true_rule(x)) == [1.0, -1.0, 1.0]
    with pytest.raises(ValueError, match="3 covariates"):
        true_rule([[1.0, 2.0]])


@pytest.mark.parametrize(
    ("kwargs", "match"),
    [
        ({"reps": 0}, "reps"),
        ({"scenarios": (5,)}, "scenario"),
        ({"p": 2}, "p >= 3"),
        ({"lam": (0.1,)}, "lam"),
        ({"jobs": 0}, "jobs"),
        ({"seed": -3}, "seed"),
        ({"probs": (0.25, 1.0)}, "quantile levels"),
    ],
)
def test_config_invalid(kwargs, match):
    with pytest.raises(ConfigError, match=match):
        BenchConfig(**kwargs)


def small_config(**changes):
    values = dict(
        ns=(40,),
        reps=2,
        p=3,
        test_size=300,
        methods=("dlearn", "l1pls"),
        folds=5,
        timing=False,
    )
    values.update(changes)
    return BenchConfig(**values)


def test_rows_for_every_metric():
    report = run_benchmark(small_config(timing=True))
    metrics = {"misclassification", "value", "q25", "q50", "time"}
    for method in ("dlearn", "l1pls"):
        assert {r.metric for r in report.rows if r.method == method} == metrics
    row = report.get(1, 40, "dlearn", "misclassification")
    assert row.count == 2
    assert 0 <= row.mean <= 1
    assert report.failures == []
    assert report.notes == ["residual weighted learning is not included"]
    with pytest.raises(KeyError):
        report.get(2, 40, "dlearn", "value")


def test_idr_cde_rows():
    config = small_config(ns=(20,), test_size=200, methods=("idr-cde",), lam=(0.1, 0.1))
    report = run_benchmark(config)
    metrics = {r.metric for r in report.rows}
    assert metrics == {"misclassification", "value", "q25", "q50", "dc_iterations"}
    assert report.get(1, 20, "idr-cde", "dc_iterations").mean >= 0


def test_reproducible():
    config = small_config(scenarios=(1, 2))
    first, second = io.StringIO(), io.StringIO()
    run_benchmark(config).to_csv(first)
    run_benchmark(config).to_csv(second)
    assert first.getvalue() == second.getvalue()
    assert first.getvalue().splitlines()[0] == "scenario,n,method,metric,mean,se,count"

    threaded = io.StringIO()
    run_benchmark(small_config(scenarios=(1, 2), jobs=2)).to_csv(threaded)
    assert threaded.getvalue() == first.getvalue()


def test_oracle_and_random():
    registry = {"oracle": oracle_method, "random": random_method}
    config = small_config(methods=("oracle", "random"), test_size=10_000, reps=1)
    report = run_benchmark(config, registry)
    assert report.get(1, 40, "oracle", "misclassification").mean == 0.0
    assert abs(report.get(1, 40, "random", "misclassification").mean - 0.5) <= 0.05


def test_failures_are_recorded():
    def broken(train, config, rng, /):
        raise SolverError("no progress")

    registry = dict(METHODS, broken=broken)
    report = run_benchmark(small_config(methods=("dlearn", "broken")), registry)
    assert [(f.rep, f.method, f.error) for f in report.failures] == [
        (0, "broken", "SolverError: no progress"),
        (1, "broken", "SolverError: no progress"),
    ]
    assert all(r.method == "dlearn" for r in report.rows)


def test_unknown_method():
    with pytest.raises(ConfigError, match="unknown method"):
        run_benchmark(small_config(methods=("rwl",)))


def test_json_single_replication():
    report = run_benchmark(small_config(reps=1, methods=("dlearn",)))
    d = json.loads(report.to_json())
    row = d["rows"][0]
    assert row["se"] is None
    assert row["count"] == 1
    assert d["failures"] == []


def test_methods_use_training_data_only():
    train = simulate(ScenarioSpec(1, 30, 3, seed=2))
    config = small_config(lam=(0.1, 0.1))
    for method in (dlearn_method, idr_cde_method):
        a = method(train, config, np.random.default_rng(0))
        b = method(train, config, np.random.default_rng(0))
        assert np.array_equal(a.rule.beta, b.rule.beta)
        assert a.rule.intercept == b.rule.intercept


@slow
def test_standard_errors_shrink():
    def se(reps):
        config = small_config(reps=reps, ns=(50,), methods=("random",), test_size=500)
        return run_benchmark(config, {"random": random_method}).get(
            1, 50, "random", "value"
        ).se

    assert se(16) < se(4)


@slow
@pytest.mark.parametrize("scenario", [1, 2])
def test_replication_study(scenario):
    config = BenchConfig(scenarios=(scenario,), ns=(100,), reps=20, p=10, jobs=4)
    report = run_benchmark(config)
    ours = report.get(scenario, 100, "idr-cde", "misclassification").mean
    assert ours <= (0.35 if scenario == 1 else 0.30)
    for baseline in ("dlearn", "l1pls"):
        assert ours < report.get(scenario, 100, baseline, "misclassification").mean
    if scenario == 1:
        q25 = report.get(1, 100, "idr-cde", "q25").mean
        assert q25 >= 1.5
        for baseline in ("dlearn", "l1pls"):
            assert q25 > report.get(1, 100, baseline, "q25").mean
    assert not math.isnan(report.get(scenario, 100, "idr-cde", "time").mean)


def test_idr_cde_reports_penalties():
    train = simulate(ScenarioSpec(1, 30, 3, seed=2))
    outcome = idr_cde_method(train, small_config(lam=(0.02, 0.05)), np.random.default_rng(0))
    assert outcome.penalties == (0.02, 0.05)
    assert outcome.dc_iterations is not None


@slow
def test_fit_time():
    train = simulate(ScenarioSpec(1, 200, 10, seed=0))
    config = BenchConfig(methods=("idr-cde",))
    start = time.perf_counter()
    idr_cde_method(train, config, np.random.default_rng(0))
    assert time.perf_counter() - start <= 30.0


@slow
def test_test_rows_do_not_reach_the_fit():
    """Permuting or redrawing the test rows leaves the fitted rules and
    the cross-validated penalties unchanged.
    """
    seen = {}

    def recording(train, config, rng, /):
        outcome = idr_cde_method(train, config, rng)
        seen.setdefault(config.test_size, []).append(outcome)
        return outcome

    config = small_config(
        ns=(30,), reps=2, methods=("idr-cde",), cv=True, folds=3, grid=((0.0, 0.01), (0.0, 0.1))
    )
    for test_size in (300, 500):
        run_benchmark(dataclasses.replace(config, test_size=test_size), {"idr-cde": recording})
    for a, b in zip(seen[300], seen[500]):
        assert a.penalties == b.penalties
        assert np.array_equal(a.rule.beta, b.rule.beta)
        assert a.rule.intercept == b.rule.intercept
    assert len(seen[300]) == len(seen[500]) == 2

    # the metrics of a rule do not depend on the order of the test rows
    test = simulate(ScenarioSpec(1, 400, 3, seed=9))
    rule = seen[300][0].rule
    order = np.random.default_rng(1).permutation(test.n)
    permuted = Dataset(test.x[order], test.a[order], test.z[order], test.propensity[order])
    assert empirical_value(rule, test) == empirical_value(rule, permuted)
