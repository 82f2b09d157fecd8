"""Stopping-time estimator of the conditional mean.

Level ``n`` waits for the first ``t >= 1`` at which the level-``n`` quantized
block ``X_t .. X_{lambda_{n-1}+t}`` repeats the prefix ``X_0 .. X_{lambda_{n-1}}``;
the end of that window is ``lambda_n``.  The estimate ``m_n`` averages the
level-``j`` cell representatives of ``X_{lambda_j + 1}`` for ``j < n``.

With ``exact=True`` cells are replaced by raw values (countable alphabets).

Two drivers share this contract: :class:`StreamingEstimator` consumes one
sample at a time with a KMP matcher, :class:`PathEstimator` runs the same
search over whole :class:`~stopmean.sources.SamplePath` arrays in compiled
code and is what the harness uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .dyadic import DyadicValue, Number, as_dyadic
from .quantize import PastVector, cell_index

__all__ = [
    "LevelCompletion",
    "StreamingEstimator",
    "PathEstimator",
    "naive_lambda_oracle",
    "recompute_estimates",
    "term_value",
]


@dataclass(frozen=True)
class LevelCompletion:
    n: int
    lam: int
    m: float
    emitted_at: int


def term_value(x: DyadicValue, j: int, exact: bool) -> float:
    """Summand of ``m_{j+1}``: the sample itself, or its level-``j`` left endpoint."""
    if exact:
        return float(x)
    return math.ldexp(float(cell_index(x, j)), -j)


def _mean(terms: Sequence[float]) -> float:
    return math.fsum(terms) / len(terms)


class StreamingEstimator:
    """Sample-at-a-time estimator.

    >>> est = StreamingEstimator()
    >>> [c for x in (0, 1, 0) for c in est.step(x)]
    [LevelCompletion(n=1, lam=2, m=1.0, emitted_at=2)]
    """

    def __init__(self, exact: bool = False, max_level: Optional[int] = None):
        self.exact = exact
        self.max_level = max_level
        self.history: list[DyadicValue] = []
        self.lambdas: list[int] = [0]
        self.terms: list[float] = []
        self.completions: list[LevelCompletion] = []
        self.level = 1
        self._pattern: list[Hashable] = []
        self._fail: list[int] = []
        self._q = 0
        self._cursor = 1

    def _key(self, x: DyadicValue, level: int) -> Hashable:
        return x if self.exact else cell_index(x, level)

    def _rebuild(self) -> None:
        plen = self.lambdas[-1] + 1
        pat = [self._key(x, self.level) for x in self.history[:plen]]
        fail = [0] * plen
        k = 0
        for i in range(1, plen):
            while k > 0 and pat[i] != pat[k]:
                k = fail[k - 1]
            if pat[i] == pat[k]:
                k += 1
            fail[i] = k
        self._pattern, self._fail = pat, fail
        self._q = 0
        self._cursor = 1

    @property
    def done(self) -> bool:
        return self.max_level is not None and self.level > self.max_level

    def step(self, x: Number) -> list[LevelCompletion]:
        """Append one sample and return the levels it completed (usually none)."""
        self.history.append(as_dyadic(x))
        if not self._pattern:
            self._rebuild()
        out: list[LevelCompletion] = []
        while not self.done and self._cursor < len(self.history):
            p = self._cursor
            c = self._key(self.history[p], self.level)
            pat, q = self._pattern, self._q
            while q > 0 and c != pat[q]:
                q = self._fail[q - 1]
            if c == pat[q]:
                q += 1
            self._q = q
            self._cursor += 1
            if q == len(pat):
                out.append(self._complete(p))
        return out

    def _complete(self, p: int) -> LevelCompletion:
        n = self.level
        prev = self.lambdas[-1]
        self.terms.append(term_value(self.history[prev + 1], n - 1, self.exact))
        self.lambdas.append(p)
        done = LevelCompletion(n, p, _mean(self.terms), len(self.history) - 1)
        self.completions.append(done)
        self.level += 1
        # the new pattern X_0..X_p is re-matched from t = 1 over the stored history
        self._rebuild()
        return done

    def backward_snapshot(self, depth: int) -> PastVector:
        """``(X_lam, X_{lam-1}, ..., X_{lam-depth})`` at the latest stopping time."""
        if not self.completions:
            raise ValueError("no level has completed yet")
        lam = self.lambdas[-1]
        if depth > lam:
            raise ValueError(f"depth {depth} exceeds lambda_n = {lam}")
        return PastVector(tuple(self.history[lam - i] for i in range(depth + 1)))


class PathEstimator:
    """Batch driver over :class:`SamplePath` chunks.

    ``extend`` appends a chunk and reports every level completed inside the
    samples seen so far.  Results match :class:`StreamingEstimator` fed the
    same samples one by one.
    """

    def __init__(self, exact: bool = False, max_level: Optional[int] = None):
        self.exact = exact
        self.max_level = max_level
        self.path = None
        self.lambdas: list[int] = [0]
        self.terms: list[float] = []
        self.completions: list[LevelCompletion] = []
        self.level = 1
        self._fail = None
        self._scan = 1
        self._q = 0

    @property
    def done(self) -> bool:
        return self.max_level is not None and self.level > self.max_level

    def _symbols(self) -> np.ndarray:
        if self.exact:
            return self.path.exact_symbols()
        return self.path.symbols(self.level)

    def extend(self, chunk) -> list[LevelCompletion]:
        self.path = chunk if self.path is None else self.path.concat(chunk)
        out = []
        n_total = len(self.path)
        while not self.done and self._scan < n_total:
            sym = self._symbols()
            plen = self.lambdas[-1] + 1
            if self._fail is None:
                self._fail = K.failure_table(sym[:plen])
            end, self._q = K.first_recurrence(sym, plen, self._scan, self._q, self._fail)
            if end < 0:
                self._scan = n_total
                break
            out.append(self._complete(int(end)))
        return out

    def _complete(self, p: int) -> LevelCompletion:
        n = self.level
        prev = self.lambdas[-1]
        self.terms.append(term_value(self.path.value(prev + 1), n - 1, self.exact))
        self.lambdas.append(p)
        done = LevelCompletion(n, p, _mean(self.terms), p)
        self.completions.append(done)
        self.level += 1
        self._fail = None
        self._scan = 1
        self._q = 0
        return done

    def backward_snapshot(self, depth: int) -> PastVector:
        if not self.completions:
            raise ValueError("no level has completed yet")
        lam = self.lambdas[-1]
        if depth > lam:
            raise ValueError(f"depth {depth} exceeds lambda_n = {lam}")
        return PastVector(tuple(self.path.value(lam - i) for i in range(depth + 1)))


def _as_symbols(history, level: int, exact: bool) -> np.ndarray:
    if hasattr(history, "symbols"):
        return history.exact_symbols() if exact else history.symbols(level)
    if exact:
        codes: dict = {}
        return np.array([codes.setdefault(as_dyadic(x), len(codes)) for x in history], dtype=np.int64)
    return np.array([cell_index(x, level) for x in history], dtype=object)


def naive_lambda_oracle(history, lam_prev: int, n: int, exact: bool = False) -> int:
    """Brute-force ``lambda_n`` from ``lambda_{n-1}``: try every start ``t = 1, 2, ...``.

    ``history`` is a sequence of samples or a ``SamplePath``.  Raises
    ``LookupError`` when the prefix does not recur inside the history.
    """
    sym = _as_symbols(history, n, exact)
    plen = lam_prev + 1
    starts = np.arange(1, len(sym) - plen + 1)
    for o in range(plen):
        if starts.size == 0:
            break
        starts = starts[sym[starts + o] == sym[o]]
    if starts.size == 0:
        raise LookupError(f"level-{n} prefix of length {plen} does not recur in history")
    return lam_prev + int(starts[0])


def recompute_estimates(values: Sequence[DyadicValue], lambdas: Sequence[int], exact: bool = False) -> list[float]:
    """``m_1 .. m_N`` from recorded stopping times (``lambdas[0] == 0``)."""
    terms = [term_value(as_dyadic(values[lam + 1]), j, exact) for j, lam in enumerate(lambdas[:-1])]
    return [_mean(terms[:n]) for n in range(1, len(terms) + 1)]
