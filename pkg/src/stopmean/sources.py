"""Seeded stationary sources with exact conditional-mean oracles.

All randomness comes from numpy's ``PCG64`` bit generator.  Finite chains and
the counterexample chain consume exactly one raw 64-bit word per transition,
so a path drawn in chunks is bit-identical to the same path drawn at once.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import _kernels as K
from .dyadic import DyadicValue, Number, as_dyadic, h_value
from .quantize import cell_index, cell_indices

__all__ = [
    "RNG_NAME",
    "SamplePath",
    "TablePath",
    "FloatPath",
    "MarkovSpec",
    "stationary_distribution",
    "Source",
    "MarkovSource",
    "CounterexampleSource",
    "UniformSource",
    "AR1Source",
    "ReplaySource",
    "markov_source",
    "sticky_chain",
    "iid_bernoulli",
    "iid_uniform",
    "counterexample_source",
    "ar1_source",
    "replay_source",
    "COUNTEREXAMPLE_STATIONARY_HEAD",
]

RNG_NAME = "numpy.random.PCG64"
_ROW_TOL = 2.0**-40


# --------------------------------------------------------------------------
# sample paths


def _as_int64_codes(indices: list[int]) -> np.ndarray:
    """Cell indices as int64, rank-encoded when they do not fit.

    Matching only compares symbols for equality, so a dense relabelling is
    as good as the raw indices.
    """
    if not indices or max(abs(i) for i in indices) < 2**62:
        return np.array(indices, dtype=np.int64)
    ranks = {v: r for r, v in enumerate(sorted(set(indices)))}
    return np.array([ranks[i] for i in indices], dtype=np.int64)


class SamplePath:
    """A finite stretch of a sample path with fast per-level quantization."""

    def __len__(self) -> int:
        raise NotImplementedError

    def symbols(self, level: int) -> np.ndarray:
        """Per-sample int64 codes that are equal exactly when the level-``level`` cells are.

        These are the cell indices themselves whenever they fit in int64.
        """
        raise NotImplementedError

    def exact_symbols(self) -> np.ndarray:
        """Integer codes with ``code[s] == code[t]`` iff ``X_s == X_t``."""
        raise NotImplementedError

    def value(self, t: int) -> DyadicValue:
        raise NotImplementedError

    def cell_index_at(self, t: int, level: int) -> int:
        return cell_index(self.value(t), level)

    def values(self) -> list[DyadicValue]:
        return [self.value(t) for t in range(len(self))]

    def concat(self, other: "SamplePath") -> "SamplePath":
        raise NotImplementedError


class TablePath(SamplePath):
    """Path stored as integer codes into a table of exact values.

    For chains the code is the state, so ``codes`` doubles as the state path.
    ``value_of`` maps a code to its value; it is consulted once per distinct
    code and level.
    """

    def __init__(self, codes: np.ndarray, value_of, canonical=None):
        self.codes = np.asarray(codes, dtype=np.int64)
        self._value_of = value_of
        self._canonical = canonical
        self._cache: dict[int, np.ndarray] = {}

    @property
    def states(self) -> np.ndarray:
        return self.codes

    def __len__(self):
        return self.codes.size

    def value(self, t: int) -> DyadicValue:
        return self._value_of(int(self.codes[t]))

    def symbols(self, level: int) -> np.ndarray:
        sym = self._cache.get(level)
        if sym is None or sym.size != self.codes.size:
            top = int(self.codes.max()) if self.codes.size else -1
            if top < 4096:
                present = np.flatnonzero(np.bincount(self.codes, minlength=top + 1))
                table = np.zeros(top + 1, dtype=np.int64)
                table[present] = _as_int64_codes(
                    [cell_index(self._value_of(int(c)), level) for c in present]
                )
                sym = table[self.codes]
            else:
                uniq, inverse = np.unique(self.codes, return_inverse=True)
                table = _as_int64_codes([cell_index(self._value_of(int(c)), level) for c in uniq])
                sym = table[inverse.reshape(-1)]
            self._cache[level] = sym
        return sym

    def exact_symbols(self) -> np.ndarray:
        if self._canonical is None:
            return self.codes
        return self._canonical(self.codes)

    def concat(self, other: "TablePath") -> "TablePath":
        return TablePath(
            np.concatenate([self.codes, other.codes]), self._value_of, self._canonical
        )


class FloatPath(SamplePath):
    """Path of binary64 samples (continuous sources)."""

    def __init__(self, values: np.ndarray):
        # -0.0 + 0.0 == +0.0, so equal values share a bit pattern
        self.data = np.asarray(values, dtype=np.float64) + 0.0
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self):
        return self.data.size

    def value(self, t: int) -> DyadicValue:
        return DyadicValue.from_float(float(self.data[t]))

    def symbols(self, level: int) -> np.ndarray:
        sym = self._cache.get(level)
        if sym is None or sym.size != self.data.size:
            try:
                sym = cell_indices(self.data, level)
            except OverflowError:
                sym = _as_int64_codes([cell_index(float(x), level) for x in self.data])
            self._cache[level] = sym
        return sym

    def exact_symbols(self) -> np.ndarray:
        return self.data.view(np.int64)

    def concat(self, other: "FloatPath") -> "FloatPath":
        return FloatPath(np.concatenate([self.data, other.data]))


# --------------------------------------------------------------------------
# finite Markov chains


def stationary_distribution(transitions) -> np.ndarray:
    """Stationary law of an irreducible finite chain.

    Solves ``pi (P - I) = 0`` with one equation replaced by the normalization
    and falls back to power iteration on the lazy chain ``(P + I) / 2`` when
    the residual of the direct solve is too large.
    """
    P = np.asarray(transitions, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ValueError("transition matrix must be square and non-empty")
    if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > _ROW_TOL:
        raise ValueError("rows must be probability vectors")
    m = P.shape[0]
    ncomp, _ = connected_components(P > 0, directed=True, connection="strong")
    if ncomp != 1:
        raise ValueError(f"chain is reducible ({ncomp} communicating classes)")

    A = P.T - np.eye(m)
    A[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        pi = np.full(m, 1.0 / m)
    if np.max(np.abs(pi @ P - pi)) >= _ROW_TOL or np.any(pi < -_ROW_TOL):
        lazy = 0.5 * (P + np.eye(m))
        pi = np.full(m, 1.0 / m)
        for _ in range(100_000):
            nxt = pi @ lazy
            if np.max(np.abs(nxt - pi)) < 2.0**-52:
                pi = nxt
                break
            pi = nxt
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.max(np.abs(pi @ P - pi)) >= _ROW_TOL:
        raise ValueError("could not reach a stationary vector to 2^-40")
    return pi


@dataclass
class MarkovSpec:
    values: list[DyadicValue]
    transitions: np.ndarray
    stationary: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = [as_dyadic(v) for v in self.values]
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        if self.transitions.shape != (len(self.values), len(self.values)):
            raise ValueError("need one value per state and a square transition matrix")
        self.stationary = stationary_distribution(self.transitions)

    @property
    def n_states(self) -> int:
        return len(self.values)


# --------------------------------------------------------------------------
# sources


class Source:
    """Base class: a seeded stationary process ``X_0, X_1, ...``.

    ``take(n)`` returns the next ``n`` samples as a :class:`SamplePath`;
    ``next()`` returns a single sample and shares the same stream.
    """

    kind = "abstract"
    has_oracle = True

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self._started = False

    def _words(self, n: int) -> np.ndarray:
        return self._gen.bit_generator.random_raw(n).astype(np.uint64)

    def _unit(self) -> float:
        return float(K.word_to_unit(np.uint64(self._words(1)[0])))

    def take(self, n: int) -> SamplePath:
        raise NotImplementedError

    def next(self) -> DyadicValue:
        return self.take(1).value(0)

    def cond_mean(self, state=None) -> float:
        """``E(X_{t+1} | sufficient statistic of X_0..X_t)``."""
        raise NotImplementedError

    def oracle_next(self, path: SamplePath, t: int) -> float:
        """``E(X_{t+1} | X_0..X_t)`` for the observed path."""
        raise NotImplementedError

    def oracle_limit(self, path: SamplePath, t: int, level: int) -> float:
        """Conditional mean given the past pinned down only to level-``level`` cells."""
        return self.oracle_next(path, t)

    def params(self) -> dict:
        return {}


class MarkovSource(Source):
    kind = "markov"

    def __init__(self, spec: MarkovSpec, seed: int, kind: Optional[str] = None):
        super().__init__(seed)
        self.spec = spec
        if kind is not None:
            self.kind = kind
        self._cum = np.cumsum(spec.transitions, axis=1)
        self._cum[:, -1] = np.inf
        self._cum_pi = np.cumsum(spec.stationary)
        self._cum_pi[-1] = np.inf
        self._state = -1
        vals = [float(v) for v in spec.values]
        self._means = spec.transitions @ np.array(vals)
        # canonical code per state: first state carrying the same value
        canon = []
        for i, v in enumerate(spec.values):
            canon.append(spec.values.index(v))
        self._canon = np.array(canon, dtype=np.int64)

    def _value_of(self, state: int) -> DyadicValue:
        return self.spec.values[state]

    def take(self, n: int) -> TablePath:
        if n <= 0:
            return TablePath(np.empty(0, np.int64), self._value_of, self._canon.__getitem__)
        head = []
        if not self._started:
            u = self._unit()
            self._state = int(np.searchsorted(self._cum_pi, u, side="right"))
            self._started = True
            head = [self._state]
            n -= 1
        states = K.markov_states(self._words(n), self._cum, self._state) if n else np.empty(0, np.int64)
        if states.size:
            self._state = int(states[-1])
        codes = np.concatenate([np.array(head, dtype=np.int64), states])
        return TablePath(codes, self._value_of, self._canon.__getitem__)

    def cond_mean(self, state=None) -> float:
        return float(self._means[int(state)])

    def oracle_next(self, path: TablePath, t: int) -> float:
        return self.cond_mean(int(path.states[t]))

    def oracle_limit(self, path: TablePath, t: int, level: int) -> float:
        # the state whose value sits closest to the cell's left endpoint
        idx = path.cell_index_at(t, level)
        left = DyadicValue(idx, -level)
        best = None
        for s, v in enumerate(self.spec.values):
            if cell_index(v, level) == idx:
                d = v - left
                if best is None or d < best[0]:
                    best = (d, s)
        return self.cond_mean(best[1])

    def params(self) -> dict:
        return {
            "values": [str(v) for v in self.spec.values],
            "transitions": self.spec.transitions.tolist(),
        }


def _counterexample_state_one_mean() -> float:
    total = Fraction(0)
    for i in range(2, 8):
        total += Fraction(1, 2**i) * h_value(i).to_fraction()
    return float(total)


#: stationary masses of states 0 and 1; state i >= 2 has mass 2^-(i-1) / 7
COUNTEREXAMPLE_STATIONARY_HEAD = (Fraction(4, 7), Fraction(2, 7))


class CounterexampleSource(Source):
    """Countable chain on which the quantized estimator stays biased.

    States are kept as integers; values ``h(i)`` are produced lazily as exact
    dyadics because ``h(i)`` underflows binary64 for ``i >= 11``.
    """

    kind = "counterexample"
    _STATE_ONE_MEAN = _counterexample_state_one_mean()

    def __init__(self, seed: int):
        super().__init__(seed)
        self._overflow = None
        self._state = -1

    def _overflow_word(self) -> int:
        # separate stream, touched only when a 64-bit word is entirely zero
        if self._overflow is None:
            self._overflow = np.random.PCG64(np.random.SeedSequence(self.seed).spawn(1)[0])
        return int(self._overflow.random_raw())

    def _tail(self, w: int) -> int:
        """Geometric count ``G`` with ``P(G=g) = 2^-(g+1)``, no truncation."""
        g = 0
        while w == 0:
            g += 64
            w = self._overflow_word()
        return g + ((w & -w).bit_length() - 1)

    def _initial_state(self) -> int:
        w = self._words(2)
        u53 = int(w[0]) >> 11
        # exact comparison against 4/7 and 6/7
        if 7 * u53 < 4 * 2**53:
            return 0
        if 7 * u53 < 6 * 2**53:
            return 1
        return 2 + self._tail(int(w[1]))

    def take(self, n: int) -> TablePath:
        if n <= 0:
            return TablePath(np.empty(0, np.int64), h_value)
        head = []
        if not self._started:
            self._state = self._initial_state()
            self._started = True
            head = [self._state]
            n -= 1
        if n:
            states = K.counterexample_states(self._words(n), self._state)
            for t in np.flatnonzero(states < 0):
                states[t] = 1 + self._tail(0)
            self._state = int(states[-1])
        else:
            states = np.empty(0, np.int64)
        return TablePath(np.concatenate([np.array(head, dtype=np.int64), states]), h_value)

    def cond_mean(self, state=None) -> float:
        state = int(state)
        if state == 0:
            return 0.5
        if state == 1:
            return self._STATE_ONE_MEAN
        return 0.0

    def oracle_next(self, path: TablePath, t: int) -> float:
        return self.cond_mean(int(path.states[t]))

    def oracle_limit(self, path: TablePath, t: int, level: int) -> float:
        idx = path.cell_index_at(t, level)
        if idx == 0:
            return self.cond_mean(0)
        if idx == 1 << level:
            return self.cond_mean(1)
        return 0.0


class UniformSource(Source):
    """IID uniform samples on ``[0, 1)`` with 53-bit resolution."""

    kind = "iid_uniform"

    def take(self, n: int) -> FloatPath:
        words = self._words(max(n, 0))
        return FloatPath((words >> np.uint64(11)).astype(np.float64) * 2.0**-53)

    def cond_mean(self, state=None) -> float:
        return 0.5

    def oracle_next(self, path, t) -> float:
        return 0.5


class AR1Source(Source):
    """Gaussian AR(1): ``X_{t+1} = a X_t + sigma Z_t``, started stationary."""

    kind = "ar1"

    def __init__(self, a: float, sigma: float, seed: int):
        if not abs(a) < 1:
            raise ValueError("AR(1) coefficient must satisfy |a| < 1")
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        super().__init__(seed)
        self.a = float(a)
        self.sigma = float(sigma)
        self._x = 0.0

    def take(self, n: int) -> FloatPath:
        if n <= 0:
            return FloatPath(np.empty(0))
        z = self._gen.standard_normal(n)
        head = np.empty(0)
        if not self._started:
            self._x = float(z[0]) * self.sigma / math.sqrt(1.0 - self.a**2)
            self._started = True
            head = np.array([self._x])
            z = z[1:]
        xs = K.ar1_values(z, self.a, self.sigma, self._x)
        if xs.size:
            self._x = float(xs[-1])
        return FloatPath(np.concatenate([head, xs]))

    def cond_mean(self, state=None) -> float:
        return self.a * float(state)

    def oracle_next(self, path, t) -> float:
        return self.a * float(path.data[t])

    def params(self) -> dict:
        return {"a": self.a, "sigma": self.sigma}


class ReplaySource(Source):
    """Deterministic periodic replay of a fixed pattern (debugging aid)."""

    kind = "replay"

    def __init__(self, pattern: Sequence[Number], seed: int = 0):
        super().__init__(seed)
        if not pattern:
            raise ValueError("replay pattern must be non-empty")
        self.pattern = [as_dyadic(v) for v in pattern]
        self._pos = 0
        self._canon = np.array([self.pattern.index(v) for v in self.pattern], dtype=np.int64)

    def _value_of(self, pos: int) -> DyadicValue:
        return self.pattern[pos]

    def take(self, n: int) -> TablePath:
        n = max(n, 0)
        codes = (self._pos + np.arange(n, dtype=np.int64)) % len(self.pattern)
        self._pos = (self._pos + n) % len(self.pattern)
        return TablePath(codes, self._value_of, self._canon.__getitem__)

    def cond_mean(self, state=None) -> float:
        return float(self.pattern[(int(state) + 1) % len(self.pattern)])

    def oracle_next(self, path: TablePath, t: int) -> float:
        return self.cond_mean(int(path.codes[t]))

    def params(self) -> dict:
        return {"pattern": [str(v) for v in self.pattern]}


# --------------------------------------------------------------------------
# constructors


def markov_source(values, transitions, seed: int) -> MarkovSource:
    return MarkovSource(MarkovSpec(list(values), transitions), seed)


@lru_cache(maxsize=64)
def _binary_spec(p01: float, p11: float) -> MarkovSpec:
    return MarkovSpec([0, 1], [[1.0 - p01, p01], [1.0 - p11, p11]])


def sticky_chain(p_stay: float, seed: int) -> MarkovSource:
    """Binary chain on ``{0, 1}`` that keeps its value with probability ``p_stay``."""
    return MarkovSource(_binary_spec(1.0 - p_stay, p_stay), seed)


def iid_bernoulli(p: float, seed: int) -> MarkovSource:
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return MarkovSource(_binary_spec(p, p), seed, kind="iid_bernoulli")


def iid_uniform(seed: int) -> UniformSource:
    return UniformSource(seed)


def counterexample_source(seed: int) -> CounterexampleSource:
    return CounterexampleSource(seed)


def ar1_source(a: float, sigma: float, seed: int) -> AR1Source:
    return AR1Source(a, sigma, seed)


def replay_source(pattern: Sequence[Number]) -> ReplaySource:
    return ReplaySource(pattern)
