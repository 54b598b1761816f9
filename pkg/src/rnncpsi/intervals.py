"""Finite unions of closed intervals on the extended real line.

Sets are kept canonical: sorted, pairwise disjoint, and intervals that touch
or overlap are merged.  Complements are returned as closures, which is the
right notion here because every set is only ever used through Gaussian
probabilities, and boundaries carry no mass.
"""

from __future__ import annotations

import bisect
import math
from typing import Iterable, Iterator

INF = math.inf


class IntervalSet:
    __slots__ = ("_iv",)

    def __init__(self, intervals: Iterable[tuple[float, float]] = ()):
        self._iv: list[tuple[float, float]] = self._canonical(intervals)

    @staticmethod
    def _canonical(intervals) -> list[tuple[float, float]]:
        items = []
        for lo, hi in intervals:
            lo, hi = float(lo), float(hi)
            if math.isnan(lo) or math.isnan(hi):
                raise ValueError("interval endpoints must not be NaN")
            if lo <= hi:
                items.append((lo, hi))
        items.sort()
        merged: list[tuple[float, float]] = []
        for lo, hi in items:
            if merged and lo <= merged[-1][1]:
                if hi > merged[-1][1]:
                    merged[-1] = (merged[-1][0], hi)
            else:
                merged.append((lo, hi))
        return merged

    @classmethod
    def _from_canonical(cls, iv: list[tuple[float, float]]) -> "IntervalSet":
        out = cls.__new__(cls)
        out._iv = iv
        return out

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls._from_canonical([])

    @classmethod
    def full(cls) -> "IntervalSet":
        return cls._from_canonical([(-INF, INF)])

    @classmethod
    def interval(cls, lo: float, hi: float) -> "IntervalSet":
        return cls([(lo, hi)])

    # -- inspection ---------------------------------------------------------

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return list(self._iv)

    def __iter__(self) -> Iterator[tuple[float, float]]:
        return iter(self._iv)

    def __len__(self) -> int:
        return len(self._iv)

    def __bool__(self) -> bool:
        return bool(self._iv)

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalSet) and self._iv == other._iv

    def __repr__(self) -> str:
        body = ", ".join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in self._iv)
        return f"IntervalSet({body})"

    def is_empty(self) -> bool:
        return not self._iv

    def contains(self, x: float) -> bool:
        k = bisect.bisect_right(self._iv, (x, INF)) - 1
        return k >= 0 and self._iv[k][0] <= x <= self._iv[k][1]

    __contains__ = contains

    def component(self, x: float) -> tuple[float, float] | None:
        """The interval holding ``x``, if any."""
        k = bisect.bisect_right(self._iv, (x, INF)) - 1
        if k >= 0 and self._iv[k][0] <= x <= self._iv[k][1]:
            return self._iv[k]
        return None

    def length(self) -> float:
        return sum(hi - lo for lo, hi in self._iv)

    def bounds(self) -> tuple[float, float]:
        if not self._iv:
            raise ValueError("empty set has no bounds")
        return self._iv[0][0], self._iv[-1][1]

    def issubset(self, other: "IntervalSet", tol: float = 0.0) -> bool:
        for lo, hi in self._iv:
            comp = other.component(lo + tol if hi - lo > 2 * tol else 0.5 * (lo + hi))
            if comp is None or comp[0] > lo + tol or comp[1] < hi - tol:
                return False
        return True

    # -- algebra ------------------------------------------------------------

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet(self._iv + other._iv)

    __or__ = union

    def intersection(self, other: "IntervalSet") -> "IntervalSet":
        a, b = self._iv, other._iv
        i = j = 0
        out = []
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo <= hi:
                out.append((lo, hi))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        # pieces from different operands may touch at a point
        return IntervalSet(out)

    __and__ = intersection

    def complement(self) -> "IntervalSet":
        out = []
        prev = -INF
        for lo, hi in self._iv:
            if lo > prev:
                out.append((prev, lo))
            prev = hi
        if prev < INF:
            out.append((prev, INF))
        # the closure of the complement of an isolated point has no gap there
        return IntervalSet(out)

    def difference(self, other: "IntervalSet") -> "IntervalSet":
        return self.intersection(other.complement())

    __sub__ = difference

    def clip(self, lo: float, hi: float) -> "IntervalSet":
        return self.intersection(IntervalSet.interval(lo, hi))

    def gaps(self, lo: float, hi: float) -> "IntervalSet":
        """Closure of ``[lo, hi]`` minus this set."""
        return IntervalSet.interval(lo, hi).difference(self)

    def first_gap(self, lo: float, hi: float, min_width: float = 0.0) -> tuple[float, float] | None:
        """Leftmost uncovered stretch of ``[lo, hi]`` wider than ``min_width``."""
        for g_lo, g_hi in self.gaps(lo, hi):
            if g_hi - g_lo > min_width:
                return g_lo, g_hi
        return None
