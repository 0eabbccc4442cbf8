"""Reading and writing of datasets (CSV), fitted rules (JSON) and
configuration files (JSON or YAML), and their conversion to
:class:`~idr_cde.fitting.FitSpec` and
:class:`~idr_cde.bench.BenchConfig`. Malformed input raises
:class:`~idr_cde.core.DataError` or :class:`~idr_cde.core.ConfigError`.
"""

from __future__ import annotations

__all__ = [
    "ConfigLoader",
    "bench_config",
    "fit_spec",
    "load_config",
    "load_dataset",
    "load_fitted",
    "load_json",
    "load_yaml",
    "utility_spec",
    "write_dataset",
]

import csv
import dataclasses
import io
import json
import os
import pathlib
from typing import (
    IO,
    TYPE_CHECKING,
    Any,
    Dict,
    List,
    Mapping,
    Optional,
    Protocol,
    Tuple,
    Type,
    TypeVar,
    Union,
)

import numpy as np

from .bench import BenchConfig
from .core import AllocParams, ConfigError, DataError, Dataset, RuleParams, UtilitySpec
from .fitting import FitSpec

if TYPE_CHECKING:
    PathOrFile = Union[str, os.PathLike[str], io.IOBase, IO[str]]
    SafeLoader: Optional[Type[object]]
try:
    from yaml import CSafeLoader as SafeLoader, YAMLError, load
except ImportError:
    try:
        from yaml import SafeLoader, YAMLError, load
    except ImportError:
        load = SafeLoader = YAMLError = None  # type: ignore

Config = Dict[str, Any]


def load_dataset(f: PathOrFile) -> Dataset:
    """Loads a dataset from CSV with the header ``x1,...,xp,a,z,prop``.

    :raises DataError: on a malformed file, reporting the offending line
        and column, or if the data violates the dataset invariants
    """
    if isinstance(f, (str, os.PathLike)):
        with open(f, newline="", encoding="utf-8") as fp:
            return _read_dataset(fp, str(f))
    return _read_dataset(f, getattr(f, "name", "<data>"))  # type: ignore[arg-type]


def _read_dataset(fp: IO[str], name: str) -> Dataset:
    reader = csv.reader(fp)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{name}: empty file") from None
    for col in ("a", "z", "prop"):
        if col not in header:
            raise DataError(f"{name}: missing column {col!r}")
    p = len(header) - 3
    expected = [f"x{j + 1}" for j in range(p)] + ["a", "z", "prop"]
    if p < 1 or header != expected:
        raise DataError(f"{name}: header must be {','.join(expected)}, got {','.join(header)}")

    rows: List[List[float]] = []
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{name}: line {line}: expected {len(header)} fields, got {len(row)}")
        values = []
        for col, cell in zip(header, row):
            try:
                values.append(float(cell))
            except ValueError:
                raise DataError(
                    f"{name}: line {line}, column {col}: cannot parse {cell!r}"
                ) from None
        rows.append(values)
    if not rows:
        raise DataError(f"{name}: no samples")

    data = np.array(rows)
    return Dataset(data[:, :p], data[:, p], data[:, p + 1], data[:, p + 2]).checked()


def write_dataset(d: Dataset, fp: IO[str]) -> None:
    """Writes ``d`` as CSV, in the format read by :func:`load_dataset`."""
    w = csv.writer(fp, lineterminator="\n")
    w.writerow([f"x{j + 1}" for j in range(d.p)] + ["a", "z", "prop"])
    for x, a, z, prop in zip(d.x, d.a, d.z, d.propensity):
        w.writerow([repr(float(v)) for v in x] + [int(a), repr(float(z)), repr(float(prop))])


class ConfigLoader(Protocol):
    def __call__(self, path: PathOrFile) -> Config: ...


def _read(path: PathOrFile, parse: Any) -> Any:
    if isinstance(path, (str, os.PathLike)):
        with open(path, encoding="utf-8") as fp:
            return parse(fp)
    return parse(path)


def load_json(path: PathOrFile) -> Config:
    """Loads a JSON configuration object."""
    try:
        cfg = _read(path, json.load)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON configuration: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be an object")
    return cfg


load_yaml: Optional[ConfigLoader]
if load is None:
    load_yaml = None
else:

    def load_yaml(path: PathOrFile) -> Config:
        """Loads a YAML configuration mapping."""
        try:
            cfg = _read(path, lambda fp: load(fp, Loader=SafeLoader))  # type: ignore
        except YAMLError as e:
            raise ConfigError(f"invalid YAML configuration: {e}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("configuration must be a mapping")
        return cfg


def load_config(path: Union[str, os.PathLike[str]]) -> Config:
    """Loads a configuration file, YAML for ``.yaml`` and ``.yml``
    suffixes and JSON otherwise.
    """
    if pathlib.Path(path).suffix.lower() in (".yaml", ".yml"):
        if load_yaml is None:
            raise ConfigError("yaml configuration unavailable, please install pyyaml")
        return load_yaml(path)
    return load_json(path)


T = TypeVar("T")


def _build(cls: Type[T], cfg: Mapping[str, Any], **fixed: Any) -> T:
    names = {f.name for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    if unknown := sorted(set(cfg) - names - set(fixed)):
        raise ConfigError(f"unknown {cls.__name__} setting(s): {', '.join(unknown)}")
    try:
        return cls(**{**cfg, **fixed})
    except TypeError as e:
        raise ConfigError(f"invalid {cls.__name__} configuration: {e}") from None


def utility_spec(cfg: Any) -> UtilitySpec:
    """:class:`UtilitySpec` from a mapping such as
    ``{"kind": "piecewise_linear", "xi1": 0, "xi2": 2}``.
    """
    if isinstance(cfg, UtilitySpec):
        return cfg
    if not isinstance(cfg, Mapping):
        raise ConfigError("utility must be a mapping with a 'kind'")
    return _build(UtilitySpec, cfg)


def fit_spec(data: Dataset, cfg: Mapping[str, Any]) -> FitSpec:
    """:class:`FitSpec` of ``data`` from configuration values."""
    values = dict(cfg)
    if "utility" in values:
        values["utility"] = utility_spec(values["utility"])
    return _build(FitSpec, values, data=data)


def bench_config(cfg: Mapping[str, Any]) -> BenchConfig:
    """:class:`BenchConfig` from configuration values."""
    return _build(BenchConfig, cfg)


def load_fitted(path: PathOrFile) -> Tuple[RuleParams, AllocParams]:
    """Rule and allocation of a fit result written by ``fit``."""
    try:
        d = _read(path, json.load)
        return (
            RuleParams(d["beta"], float(d["bias"])),
            AllocParams(d["b"], float(d["b0"])),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"invalid fit result: {e}") from None
