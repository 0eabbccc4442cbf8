"""Small helpers shared by the estimators and the benchmark: seeded
random streams, the sign convention of the rules, fold splitting and
order-independent summaries.
"""

import math
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

__all__ = ["kfold", "mean_se", "rng_for", "sign"]


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream ``key`` of ``seed``.

    Streams are derived by position (``spawn_key``) rather than by
    drawing from a parent generator, so a replication or fold gets the
    same numbers whether it runs first, last, or on another thread.
    """
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def sign(v: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Elementwise sign with ``sign(0) = +1``."""
    return np.where(np.asarray(v, dtype=float) >= 0, 1.0, -1.0)


def mean_se(values: Iterable[float]) -> Tuple[float, float]:
    """Mean and standard error (sample sd / sqrt(R)) using compensated
    summation, so the result does not depend on the order of
    ``values``.
    """
    vs: Sequence[float] = sorted(values)
    r = len(vs)
    if r == 0:
        return math.nan, math.nan
    mean = math.fsum(vs) / r
    if r == 1:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in vs) / (r - 1)
    return mean, math.sqrt(var / r)


def kfold(n: int, k: int, rng: np.random.Generator) -> List[npt.NDArray[np.intp]]:
    """Splits ``range(n)`` into ``k`` folds of (almost) equal size after
    a random permutation. Each fold is sorted.
    """
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k} for n={n}")
    return [np.sort(f) for f in np.array_split(rng.permutation(n), k)]
