"""Monotone piecewise-constant allocation curves and exact payment integration."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class StepFunction:
    """Allocation probability as a function of a candidate value ``w``.

    With breakpoints ``b_0 < ... < b_{m-1}`` and levels ``l_0..l_m``, the
    function is ``l_0`` on ``(-inf, b_0]``, ``l_k`` on ``(b_{k-1}, b_k]`` and
    ``l_m`` on ``(b_{m-1}, inf)``.
    """

    breakpoints: tuple[float, ...]
    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        bps = tuple(float(b) for b in self.breakpoints)
        lv = tuple(float(v) for v in self.levels)
        if len(lv) != len(bps) + 1:
            raise ValueError("need exactly one more level than breakpoints")
        if any(b1 >= b2 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if not all(math.isfinite(b) for b in bps):
            raise ValueError("breakpoints must be finite")
        if any(not 0.0 <= v <= 1.0 for v in lv):
            raise ValueError("levels must lie in [0, 1]")
        self._check_order(lv)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "levels", lv)

    def _check_order(self, levels: tuple[float, ...]) -> None:
        if any(a > b for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be non-decreasing")

    @classmethod
    def from_thresholds(cls, points: Sequence[float], level_at) -> StepFunction:
        """Build from candidate jump points and a right-closed evaluator ``level_at(w)``."""
        bps = sorted({float(p) for p in points if math.isfinite(p)})
        levels = [level_at(b) for b in bps]
        levels.append(level_at(math.nextafter(bps[-1], math.inf)) if bps else level_at(0.0))
        # merge breakpoints that do not change the level
        keep_b, keep_l = [], [levels[0]]
        for b, nxt in zip(bps, levels[1:]):
            if nxt != keep_l[-1]:
                keep_b.append(b)
                keep_l.append(nxt)
        return cls(tuple(keep_b), tuple(keep_l))

    def __call__(self, w: float) -> float:
        return self.levels[bisect.bisect_left(self.breakpoints, w)]

    def integral(self, lo: float, hi: float) -> float:
        """Exact integral over ``[lo, hi]`` as a sum over constant pieces."""
        if hi < lo:
            return -self.integral(hi, lo)
        start = bisect.bisect_right(self.breakpoints, lo)
        stop = bisect.bisect_left(self.breakpoints, hi)
        edges = [lo, *self.breakpoints[start:stop], hi]
        # a piece (a, b] carries the level at its right end
        return math.fsum((b - a) * self(b) for a, b in zip(edges, edges[1:]) if b > a)

    def payment(self, value: float) -> float:
        """Threshold payment ``x(v) v - integral_0^v x(t) dt`` for a bidder of value ``v``."""
        p = self(value) * value - self.integral(0.0, value)
        # a flat curve can overshoot x(v) v by an ulp in the fsum
        return max(p, 0.0)
