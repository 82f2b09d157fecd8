"""Nested dyadic partitions of the real line.

Level ``k`` cuts the line into half-open cells ``[i 2^-k, (i+1) 2^-k)``.  A
point on a cell boundary belongs to the cell on its right.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .dyadic import DyadicValue, Number, as_dyadic

__all__ = [
    "Cell",
    "QuantizedBlock",
    "PastVector",
    "cell_index",
    "cell_of",
    "representative",
    "quantize_block",
    "cell_indices",
    "dstar",
]


@dataclass(frozen=True)
class Cell:
    level: int
    index: int

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be nonnegative")

    @property
    def left(self) -> DyadicValue:
        return DyadicValue(self.index, -self.level)

    @property
    def right(self) -> DyadicValue:
        return DyadicValue(self.index + 1, -self.level)

    @property
    def width(self) -> DyadicValue:
        return DyadicValue(1, -self.level)

    def __contains__(self, x: Number) -> bool:
        x = as_dyadic(x)
        return self.left <= x < self.right

    def parent(self) -> "Cell":
        if self.level == 0:
            raise ValueError("level-0 cells have no parent")
        return Cell(self.level - 1, self.index >> 1)


@dataclass(frozen=True)
class QuantizedBlock:
    level: int
    indices: tuple[int, ...]

    def __len__(self):
        return len(self.indices)

    def coarsen(self, level: int) -> "QuantizedBlock":
        """Re-express the block at a coarser level."""
        if level > self.level:
            raise ValueError("can only coarsen to a lower level")
        shift = self.level - level
        return QuantizedBlock(level, tuple(i >> shift for i in self.indices))


@dataclass(frozen=True)
class PastVector:
    """Finite past ``(x_0, x_-1, ..., x_-K)``, most recent first."""

    values: tuple[DyadicValue, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("a past vector holds at least x_0")
        object.__setattr__(self, "values", tuple(as_dyadic(v) for v in self.values))

    @property
    def depth(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, i: int) -> DyadicValue:
        """``past[-i]`` (or ``past[i]``) is the coordinate ``i`` steps back."""
        return self.values[abs(i)]


def cell_index(x: Number, k: int) -> int:
    """Index ``i`` of the level-``k`` cell containing ``x``."""
    if k < 0:
        raise ValueError("level must be nonnegative")
    return as_dyadic(x).floor_scaled(k)


def cell_of(x: Number, k: int) -> Cell:
    return Cell(k, cell_index(x, k))


def representative(cell: Cell) -> DyadicValue:
    """Left endpoint of the cell; exact and inside the half-open interval."""
    return cell.left


def quantize_block(xs: Iterable[Number], k: int) -> QuantizedBlock:
    return QuantizedBlock(k, tuple(cell_index(x, k) for x in xs))


def cell_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Vectorized ``cell_index`` for float64 arrays.

    Scaling by ``2**k`` is exact, so ``floor`` gives the same answer as the
    exact path as long as the result fits in int64.
    """
    if k < 0:
        raise ValueError("level must be nonnegative")
    scaled = np.floor(np.ldexp(np.asarray(values, dtype=np.float64), k))
    if scaled.size and np.max(np.abs(scaled)) >= 2.0**62:
        raise OverflowError(f"cell indices at level {k} exceed int64")
    return scaled.astype(np.int64)


def dstar(a: PastVector, b: PastVector) -> tuple[float, float]:
    """Truncated past metric and the bound on the omitted tail.

    Returns ``(value, tail_bound)`` where the infinite-past distance lies in
    ``[value, value + tail_bound)``.
    """
    if a.depth != b.depth:
        raise ValueError(f"depth mismatch: {a.depth} != {b.depth}")
    total = 0.0
    for i, (x, y) in enumerate(zip(a.values, b.values)):
        d = abs(float(x - y))
        total += 2.0 ** (-i - 1) * (d / (1.0 + d)) if d != float("inf") else 2.0 ** (-i - 1)
    return total, 2.0 ** (-a.depth - 1)

