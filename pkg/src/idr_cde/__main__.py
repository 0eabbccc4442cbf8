import argparse
import dataclasses
import datetime
import json
import logging
import sys
from typing import IO, Any, Callable, Dict, List, Optional, Sequence

from . import bench as benchlab
from .core import ConfigError, DataError, SolverError, UtilitySpec
from .evaluation import cross_validate, evaluate, write_fold_table
from .fitting import fit
from .loaders import (
    bench_config,
    fit_spec,
    load_config,
    load_dataset,
    load_fitted,
    utility_spec,
    write_dataset,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4

logger = logging.getLogger("idr_cde")


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {value}")
    return value


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid probability {text!r}") from None
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"quantile levels must lie in (0, 1), got {value}")
    return value


@dataclasses.dataclass(frozen=True)
class CVConfig:
    folds: int = 10
    seed: int = 0
    jobs: int = 1
    grid: Optional[List[Sequence[float]]] = None


def _config(args: argparse.Namespace) -> Dict[str, Any]:
    return load_config(args.config) if args.config else {}


def _overrides(args: argparse.Namespace, **names: str) -> Dict[str, Any]:
    """Flag values given on the command line, keyed by configuration name."""
    return {
        key: getattr(args, dest)
        for key, dest in names.items()
        if getattr(args, dest, None) is not None
    }


def _write(path: Optional[str], writer: Callable[[IO[str]], None]) -> None:
    if path is None or path == "-":
        writer(sys.stdout)
        sys.stdout.flush()
    else:
        with open(path, "w", newline="", encoding="utf-8") as fp:
            writer(fp)


def _dump(path: Optional[str], payload: Dict[str, Any], timestamp: bool) -> None:
    if timestamp:
        payload = {
            **payload,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
    _write(path, lambda fp: fp.write(json.dumps(payload, indent=2) + "\n"))


def _flag_utility(args: argparse.Namespace, cfg: Dict[str, Any]) -> Dict[str, Any]:
    """Folds ``--xi1``/``--xi2`` into the utility section of ``cfg``."""
    if args.xi1 is None and args.xi2 is None:
        return cfg
    base = utility_spec(cfg.get("utility", UtilitySpec.piecewise_linear(0.0, 2.0)))
    values = dataclasses.asdict(base)
    values["kind"] = "piecewise_linear"
    if args.xi1 is not None:
        values["xi1"] = args.xi1
    if args.xi2 is not None:
        values["xi2"] = args.xi2
    return {**cfg, "utility": values}


def run_simulate(args: argparse.Namespace) -> None:
    spec = benchlab.ScenarioSpec(args.scenario, args.n, args.p, args.seed)
    data = benchlab.simulate(spec)
    _write(args.out, lambda fp: write_dataset(data, fp))


def run_fit(args: argparse.Namespace) -> None:
    cfg = _flag_utility(args, _config(args))
    cfg.update(
        _overrides(
            args,
            lam_alloc="lam_alloc",
            lam_rule="lam_rule",
            warm_start="warm_start",
            surrogate="surrogate",
        )
    )
    spec = fit_spec(load_dataset(args.data), cfg)
    fitted = fit(spec)
    logger.info(
        "fitted in %d DC iterations, objective %.6g", fitted.iterations, fitted.objective
    )
    _dump(args.out, fitted.to_dict(), args.timestamp)
    if args.trace:
        traces = {
            f"{b:+d}": r.trace.to_dict()
            for b, r in sorted(fitted.runs.items(), reverse=True)
        }
        _dump(args.trace, traces, False)


def run_cv(args: argparse.Namespace) -> None:
    cfg = _flag_utility(args, _config(args))
    cv_keys = {f.name for f in dataclasses.fields(CVConfig)}
    try:
        cv = CVConfig(**{k: v for k, v in cfg.items() if k in cv_keys})
    except TypeError as e:
        raise ConfigError(f"invalid cross-validation configuration: {e}") from None
    cv = dataclasses.replace(cv, **_overrides(args, folds="folds", seed="seed", jobs="jobs"))
    spec = fit_spec(load_dataset(args.data), {k: v for k, v in cfg.items() if k not in cv_keys})

    grid = None if cv.grid is None else [(float(a), float(r)) for a, r in cv.grid]
    result = cross_validate(spec, grid, cv.folds, cv.seed, jobs=cv.jobs)
    _write(args.out, lambda fp: write_fold_table(result.table, fp))
    if args.winner:
        assert result.fitted is not None
        winner = {
            "lambda_alloc": result.best[0],
            "lambda_rule": result.best[1],
            "score": result.scores[result.best],
            "fit": result.fitted.to_dict(),
        }
        _dump(args.winner, winner, args.timestamp)


def run_eval(args: argparse.Namespace) -> None:
    cfg = _flag_utility(args, _config(args))
    u = utility_spec(cfg.get("utility", UtilitySpec.piecewise_linear(0.0, 2.0)))
    rule, alloc = load_fitted(args.fitted)
    data = load_dataset(args.data)
    if alloc.b.shape[0] != data.p or rule.beta.shape[0] != data.p:
        raise DataError(f"fit result has {alloc.b.shape[0]} covariates but the data {data.p}")
    report = evaluate(
        rule,
        alloc,
        u,
        data,
        truth=benchlab.true_rule if args.true_rule else None,
        probs=args.probs,
    )
    if report.status == "undefined":
        logger.warning("no test sample matches the rule, criteria are undefined")
    _dump(args.out, report.to_dict(), args.timestamp)


def run_bench(args: argparse.Namespace) -> None:
    cfg = _config(args)
    cfg.update(
        _overrides(
            args,
            scenarios="scenarios",
            ns="ns",
            reps="reps",
            p="p",
            test_size="test_size",
            methods="methods",
            seed="seed",
            jobs="jobs",
            xi1="xi1",
            xi2="xi2",
        )
    )
    if args.cv:
        cfg["cv"] = True
    # timings change from one run to the next
    cfg["timing"] = args.timing or bool(cfg.get("timing", False))
    report = benchlab.run_benchmark(bench_config(cfg))
    _write(args.out, report.to_csv)
    if args.json:
        _dump(args.json, report.to_dict(), args.timestamp)


parser = argparse.ArgumentParser(
    prog="idr_cde",
    description="""Risk-aware individualized decision rules: fit, cross
    validate and evaluate rules maximising the covariate-dependent
    equivalent of the outcome, and replicate the synthetic benchmarks.""",
)
parser.set_defaults(func=None)
parser.add_argument(
    "-v", "--verbose", action="count", default=0, help="more logging, repeatable"
)
parser.add_argument(
    "-q", "--quiet", action="count", default=0, help="less logging, repeatable"
)

common = argparse.ArgumentParser(add_help=False)
common.add_argument(
    "-o", "--out", help="output file, stdout if omitted or `-`"
)
common.add_argument(
    "--timestamp",
    action="store_true",
    help="""Record the UTC time of the run in JSON outputs. Without it
    reruns with the same inputs and seed are byte-identical.""",
)

configured = argparse.ArgumentParser(add_help=False)
configured.add_argument(
    "-c",
    "--config",
    help="""JSON configuration (or YAML if the file ends in `.yaml` or
    `.yml` and pyyaml is installed). Flags override its values.""",
)

utility = argparse.ArgumentParser(add_help=False)
utility.add_argument(
    "--xi1", type=float, help="slope of the utility on gains, in [0, 1)"
)
utility.add_argument(
    "--xi2", type=float, help="slope of the utility on losses, above 1"
)

sub = parser.add_subparsers(title="commands")

simulate = sub.add_parser(
    "simulate",
    help="write a synthetic dataset",
    parents=[common],
    description="""Draws a training set of one of the benchmark scenarios:
    1 (lognormal noise), 2 (Weibull noise) or 3 (heteroscedastic
    lognormal noise).""",
)
simulate.set_defaults(func=run_simulate)
simulate.add_argument("--scenario", type=int, choices=[1, 2, 3], default=1)
simulate.add_argument("-n", type=int, default=100, help="number of samples")
simulate.add_argument("-p", type=int, default=10, help="number of covariates, at least 3")
simulate.add_argument("--seed", type=_seed, default=0)

fitp = sub.add_parser(
    "fit",
    help="fit a decision rule and an allocation function",
    parents=[common, configured, utility],
    description="""Runs the proximal DC algorithm for both signs of the
    rule's bias and keeps the better fit. The configuration holds the
    `FitSpec` fields, the utility as a `utility` mapping.""",
)
fitp.set_defaults(func=run_fit)
fitp.add_argument("data", help="dataset CSV with header x1,...,xp,a,z,prop")
fitp.add_argument("--lam-alloc", type=float, dest="lam_alloc")
fitp.add_argument("--lam-rule", type=float, dest="lam_rule")
fitp.add_argument("--warm-start", choices=["zeros", "dlearn", "weighted"], dest="warm_start")
fitp.add_argument("--surrogate", choices=["plain_l1", "mcp_like"])
fitp.add_argument("--trace", help="write the per-iteration solver trace of both runs there")

cvp = sub.add_parser(
    "cv",
    help="cross-validate the penalty weights",
    parents=[common, configured, utility],
    description="""Writes the held-out criterion of every grid point and
    fold as CSV. The configuration holds `FitSpec` fields plus `folds`,
    `seed`, `jobs` and `grid` (a list of [lambda_alloc, lambda_rule]).""",
)
cvp.set_defaults(func=run_cv)
cvp.add_argument("data", help="dataset CSV")
cvp.add_argument("-k", "--folds", type=int)
cvp.add_argument("--seed", type=_seed)
cvp.add_argument("-j", "--jobs", type=int)
cvp.add_argument("--winner", help="write the winning penalties and their refit there")

evalp = sub.add_parser(
    "eval",
    help="evaluate a fitted rule on test data",
    parents=[common, configured, utility],
)
evalp.set_defaults(func=run_eval)
evalp.add_argument("fitted", help="JSON written by `fit`")
evalp.add_argument("data", help="test dataset CSV")
evalp.add_argument(
    "--true-rule",
    action="store_true",
    help="report misclassification against the benchmark scenarios' optimal rule",
)
evalp.add_argument(
    "--probs", type=_probability, nargs="+", default=[0.25, 0.5], help="quantile levels"
)

benchp = sub.add_parser(
    "bench",
    help="replicate the synthetic benchmarks",
    parents=[common, configured],
    description="""Fits every method on simulated training sets and
    reports mean and standard error of each metric over the
    replications as CSV. The configuration holds `BenchConfig` fields.""",
)
benchp.set_defaults(func=run_bench)
benchp.add_argument("--scenarios", type=int, nargs="+", choices=[1, 2, 3])
benchp.add_argument("--ns", type=int, nargs="+", help="training sizes")
benchp.add_argument("-r", "--reps", type=int)
benchp.add_argument("-p", type=int)
benchp.add_argument("--test-size", type=int, dest="test_size")
benchp.add_argument("--methods", nargs="+")
benchp.add_argument("--seed", type=_seed)
benchp.add_argument("-j", "--jobs", type=int)
benchp.add_argument("--xi1", type=float)
benchp.add_argument("--xi2", type=float)
benchp.add_argument("--cv", action="store_true", help="cross-validate IDR-CDE's penalties")
benchp.add_argument("--timing", action="store_true", help="record fit times")
benchp.add_argument("--json", help="also write the report as JSON there")


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        stream=sys.stderr,
        level=max(logging.DEBUG, logging.WARNING - 10 * (args.verbose - args.quiet)),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.func is None:
        parser.print_help()
        return EXIT_CONFIG

    try:
        args.func(args)
    except ConfigError as e:
        print(f"{parser.prog}: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as e:
        print(f"{parser.prog}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as e:
        print(f"{parser.prog}: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    return 0


if __name__ == "__main__":
    sys.exit(main())
