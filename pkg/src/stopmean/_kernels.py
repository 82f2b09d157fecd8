"""Compiled inner loops: path generation and first-recurrence search."""

import numpy as np
from numba import njit

_U53 = 2.0**-53


@njit(cache=True)
def word_to_unit(w):
    return np.float64(w >> np.uint64(11)) * _U53


@njit(cache=True)
def trailing_zeros(w):
    """Trailing zero bits of a nonzero uint64."""
    n = 0
    one = np.uint64(1)
    while (w & one) == 0:
        w >>= one
        n += 1
    return n


@njit(cache=True)
def markov_states(words, cum_rows, state):
    """Advance a finite chain one step per word (inverse CDF on the row)."""
    n = words.size
    out = np.empty(n, np.int64)
    m = cum_rows.shape[1]
    for t in range(n):
        u = word_to_unit(words[t])
        j = 0
        while j < m - 1 and u >= cum_rows[state, j]:
            j += 1
        state = j
        out[t] = state
    return out


@njit(cache=True)
def counterexample_states(words, state):
    """Transitions 0->{0,1}, 1->0 or i>=2 with mass 2^-i, i->0.

    A zero word from state 1 (probability 2^-64) yields the marker -1; the
    caller resolves it from an overflow stream.
    """
    n = words.size
    out = np.empty(n, np.int64)
    one = np.uint64(1)
    for t in range(n):
        w = words[t]
        if state == 0:
            state = 1 if (w & one) else 0
        elif state == 1:
            if w == 0:
                state = -1
            else:
                tz = trailing_zeros(w)
                state = 0 if tz == 0 else tz + 1
        else:
            state = 0
        out[t] = state
    return out


@njit(cache=True)
def ar1_values(normals, a, sigma, x):
    n = normals.size
    out = np.empty(n, np.float64)
    for t in range(n):
        x = a * x + sigma * normals[t]
        out[t] = x
    return out


@njit(cache=True)
def failure_table(pattern):
    m = pattern.size
    fail = np.zeros(m, np.int64)
    k = 0
    for i in range(1, m):
        while k > 0 and pattern[i] != pattern[k]:
            k = fail[k - 1]
        if pattern[i] == pattern[k]:
            k += 1
        fail[i] = k
    return fail


@njit(cache=True)
def first_recurrence(symbols, plen, start, q, fail):
    """Scan ``symbols[start:]`` for the first full match of ``symbols[:plen]``.

    The match must begin at index >= 1.  ``q`` is the matched length carried
    over from a previous partial scan.  Returns ``(end, q)`` where ``end`` is
    the index of the last matched symbol, or -1 if none was found.
    """
    n = symbols.size
    for p in range(start, n):
        c = symbols[p]
        while q > 0 and c != symbols[q]:
            q = fail[q - 1]
        if c == symbols[q]:
            q += 1
        if q == plen:
            return p, q
    return -1, q
