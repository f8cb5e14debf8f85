"""Byte-accurate memory accounting and phase timing.

The ledger counts bytes of index/value arrays and hash-table capacity as
reported by the sparse containers; it deliberately ignores process RSS.
Categories:

* ``input_matrices``      A and P storage on this rank.
* ``output_matrix``       the allocated C.
* ``auxiliary_matrices``  two-step only: C~ = AP, the explicit transpose of
                          P, and the stored send-side product rows.
* ``transient_hash_peak`` hash working memory (row sets/accumulators and
                          the symbolic arenas); freed after each phase.
* ``plan_cache``          everything a cached plan keeps for repeated
                          numeric products (remote rows, send patterns,
                          staging layout).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

CATEGORIES = (
    "input_matrices",
    "output_matrix",
    "auxiliary_matrices",
    "transient_hash_peak",
    "plan_cache",
)

# Categories whose peak-of-sum is "memory spent on the triple product"
# (the output matrix is included, matching how the per-core figures in
# multigrid setup studies are usually quoted).
PRODUCT_CATEGORIES = ("output_matrix", "auxiliary_matrices", "transient_hash_peak", "plan_cache")


@dataclass
class MemorySnapshot:
    current: dict[str, int]
    peak: dict[str, int]
    product_peak: int
    alloc_events: int

    def total_current(self) -> int:
        return sum(self.current.values())


class MemoryLedger:
    """Per-rank byte counters with per-category current and peak."""

    __slots__ = ("_current", "_peak", "_product_current", "_product_peak", "alloc_events")

    def __init__(self):
        self._current = {c: 0 for c in CATEGORIES}
        self._peak = {c: 0 for c in CATEGORIES}
        self._product_current = 0
        self._product_peak = 0
        self.alloc_events = 0

    def add(self, category: str, nbytes: int):
        if nbytes < 0:
            raise ValueError("cannot add negative bytes")
        if nbytes == 0:
            return
        self._current[category] += nbytes
        self.alloc_events += 1
        if self._current[category] > self._peak[category]:
            self._peak[category] = self._current[category]
        if category in PRODUCT_CATEGORIES:
            self._product_current += nbytes
            if self._product_current > self._product_peak:
                self._product_peak = self._product_current

    def release(self, category: str, nbytes: int):
        if nbytes == 0:
            return
        if nbytes < 0 or self._current[category] - nbytes < 0:
            raise ValueError(
                f"release of {nbytes} would drive {category} below zero "
                f"(current {self._current[category]})"
            )
        self._current[category] -= nbytes
        if category in PRODUCT_CATEGORIES:
            self._product_current -= nbytes

    def move(self, src: str, dst: str, nbytes: int):
        """Reclassify bytes without counting a new allocation event."""
        self.release(src, nbytes)
        self._current[dst] += nbytes
        if self._current[dst] > self._peak[dst]:
            self._peak[dst] = self._current[dst]
        if dst in PRODUCT_CATEGORIES:
            self._product_current += nbytes
            if self._product_current > self._product_peak:
                self._product_peak = self._product_current

    def current(self, category: str) -> int:
        return self._current[category]

    def peak(self, category: str) -> int:
        return self._peak[category]

    @property
    def product_peak(self) -> int:
        """Peak concurrent bytes across the triple-product categories."""
        return self._product_peak

    def snapshot(self) -> MemorySnapshot:
        return MemorySnapshot(
            dict(self._current), dict(self._peak), self._product_peak, self.alloc_events
        )


@dataclass
class PhaseTimer:
    """Named monotonic duration accumulators."""

    seconds: dict[str, float] = field(default_factory=dict)

    def phase(self, name: str):
        return _Phase(self, name)

    def accumulate(self, name: str, dt: float):
        self.seconds[name] = self.seconds.get(name, 0.0) + dt

    def get(self, name: str) -> float:
        return self.seconds.get(name, 0.0)

    def snapshot(self) -> dict[str, float]:
        return dict(self.seconds)


class _Phase:
    __slots__ = ("_timer", "_name", "_t0")

    def __init__(self, timer: PhaseTimer, name: str):
        self._timer = timer
        self._name = name

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self._timer.accumulate(self._name, time.perf_counter() - self._t0)
        return False


@dataclass
class PlanCounters:
    """Instrumented execution counts for one triple-product plan."""

    symbolic_runs: int = 0
    numeric_runs: int = 0
    symbolic_row_kernel_calls: int = 0
    numeric_row_kernel_calls: int = 0
