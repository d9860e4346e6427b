"""Millisecond clock interface: wall time live, stepped time in simulations."""

from __future__ import annotations

import time

__all__ = ["WallClock", "SimClock"]


class WallClock:
    def now_ms(self) -> int:
        return int(time.monotonic() * 1000)


class SimClock:
    """Deterministic clock advanced explicitly by the scenario runner."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: int):
        if delta_ms < 0:
            raise ValueError("cannot move the clock backwards")
        self._now += delta_ms
