"""Oracles, event detectors and the stationarity-along-stopping-times check."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .dyadic import DyadicValue, Number, as_dyadic
from .estimator import PathEstimator
from .sources import FloatPath, SamplePath, Source

__all__ = [
    "TraceRecord",
    "CSV_FIELDS",
    "oracle_stop",
    "oracle_limit",
    "detect_An",
    "detect_H_prefix",
    "StationarityReport",
    "stationarity_check",
    "total_variation",
]

CSV_FIELDS = (
    "replicate",
    "n",
    "lambda_n",
    "m_n",
    "m_prime_n",
    "oracle_stop",
    "oracle_limit",
    "gap",
    "value_at_stop",
    "event_An",
    "event_H_prefix",
)


@dataclass(frozen=True)
class TraceRecord:
    replicate: int
    n: int
    lambda_n: int
    m_n: float
    m_prime_n: Optional[float]
    oracle_stop: Optional[float]
    oracle_limit: Optional[float]
    gap: Optional[float]
    value_at_stop: DyadicValue
    event_An: Optional[bool]
    event_H_prefix: Optional[bool]

    def __post_init__(self):
        if self.gap is not None and self.gap < 0:
            raise ValueError("gap must be nonnegative")

    def as_row(self) -> dict[str, str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return {name: fmt(getattr(self, name)) for name in CSV_FIELDS}


def oracle_stop(source: Source, path: SamplePath, lam: int) -> float:
    """``E(X_{lam+1} | X_0..X_lam)``.

    The stopping time is a function of the observed prefix, so for a Markov
    source the strong Markov property reduces this to the state at ``lam``.
    """
    if not source.has_oracle:
        raise ValueError(f"source kind {source.kind!r} has no conditional-mean oracle")
    return source.oracle_next(path, lam)


def oracle_limit(source: Source, path: SamplePath, lam: int, n: int) -> float:
    """Estimate of ``e`` at the backward limit, read off the level-``n`` cell of ``X_lam``."""
    if not source.has_oracle:
        raise ValueError(f"source kind {source.kind!r} has no conditional-mean oracle")
    return source.oracle_limit(path, lam, n)


def detect_An(value: Number, n: int) -> bool:
    """True iff ``0 != value < 2^-(n+1)``, evaluated exactly."""
    v = as_dyadic(value)
    return v.mantissa != 0 and v < DyadicValue(1, -(n + 1))


def detect_H_prefix(history: Sequence[Number]) -> bool:
    if len(history) < 2:
        raise ValueError("need at least X_0 and X_1")
    return as_dyadic(history[0]) == 0 and as_dyadic(history[1]) == 1


def total_variation(a: Sequence, b: Sequence) -> float:
    """TV distance between two empirical laws on their merged support."""
    ca, cb = Counter(a), Counter(b)
    na, nb = len(a), len(b)
    return 0.5 * sum(abs(ca[x] / na - cb[x] / nb) for x in set(ca) | set(cb))


@dataclass(frozen=True)
class StationarityReport:
    level: int
    replicates: int
    completed: int
    tv_distance: float
    test: str
    p_value: float
    alpha: float

    @property
    def passed(self) -> bool:
        return self.p_value >= self.alpha


def stationarity_check(
    make_source: Callable[[int], Source],
    k: int,
    horizon: int,
    replicates: int,
    alpha: float = 1e-3,
    first_seed: int = 0,
) -> StationarityReport:
    """Compare the law of ``X_{lambda_k + 1}`` with the law of ``X_1`` across replicates.

    Discrete sources get a chi-square homogeneity test on the merged support,
    continuous ones a two-sample KS test.  Replicates whose ``lambda_k + 1``
    falls beyond ``horizon`` are dropped; fewer than half completing is an
    error.
    """
    firsts, after = [], []
    continuous = False
    for r in range(replicates):
        src = make_source(first_seed + r)
        est = PathEstimator(max_level=k)
        used, chunk = 0, 256
        while used < horizon:
            piece = src.take(min(chunk, horizon - used))
            used += len(piece)
            est.extend(piece)
            chunk *= 2
            if est.done and len(est.path) > est.lambdas[k] + 1:
                break
        if not (est.done and len(est.path) > est.lambdas[k] + 1):
            continue
        continuous = continuous or isinstance(est.path, FloatPath)
        firsts.append(est.path.value(1))
        after.append(est.path.value(est.lambdas[k] + 1))
    if len(firsts) < max(1, replicates // 2):
        raise ValueError(
            f"only {len(firsts)} of {replicates} replicates reached level {k} within {horizon} samples"
        )

    tv = total_variation(firsts, after)
    if continuous:
        res = stats.ks_2samp([float(x) for x in firsts], [float(x) for x in after])
        test, p = "ks_2samp", float(res.pvalue)
    else:
        support = sorted(set(firsts) | set(after))
        if len(support) < 2:
            test, p = "chi2", 1.0
        else:
            ca, cb = Counter(firsts), Counter(after)
            table = np.array([[ca[x] for x in support], [cb[x] for x in support]])
            _, p, _, _ = stats.chi2_contingency(table)
            test, p = "chi2", float(p)
    return StationarityReport(k, replicates, len(firsts), tv, test, p, alpha)
