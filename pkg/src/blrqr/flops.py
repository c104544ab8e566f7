"""Model-flop accounting at kernel granularity.

Counts follow fixed closed-form models rather than hardware counters, so
totals are exact integers and identical for any execution order of the same
task set.  The shared counter accepts concurrent accumulation.
"""

from __future__ import annotations

import threading
from collections import defaultdict

__all__ = [
    "FlopCounter",
    "GLOBAL",
    "reset",
    "report",
    "total",
    "qr_cost",
    "tgen_cost",
    "mm_cost",
    "svd_cost",
    "mgs_cost",
    "rrqr_cost",
]


def qr_cost(h: int, w: int) -> int:
    """Householder QR of an h x w panel (h >= w): 2hw^2 - (2/3)w^3."""
    return 2 * h * w * w - (2 * w * w * w) // 3


def tgen_cost(h: int, w: int) -> int:
    """Accumulating the w x w T factor from h x w reflectors."""
    return h * w * w


def mm_cost(m: int, k: int, n: int) -> int:
    """Dense matrix product (m x k) @ (k x n)."""
    return 2 * m * k * n


def svd_cost(c: int) -> int:
    """Full SVD of a c x c core."""
    return 12 * c * c * c


def mgs_cost(h: int, w: int) -> int:
    """Modified Gram-Schmidt on an h x w panel: 2hw^2."""
    return 2 * h * w * w


def rrqr_cost(rows: int, cols: int, rank: int) -> int:
    """Truncated column-pivoted QR stopped after `rank` reflectors."""
    return 4 * rows * cols * rank + 2 * rows * cols


class FlopCounter:
    """Thread-safe per-kind flop totals."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict[str, int] = defaultdict(int)

    def add(self, kind: str, flops: int) -> None:
        with self._lock:
            self._counts[kind] += flops

    def report(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()


GLOBAL = FlopCounter()


def add(kind: str, flops: int) -> None:
    GLOBAL.add(kind, flops)


def reset() -> None:
    GLOBAL.reset()


def report() -> dict[str, int]:
    return GLOBAL.report()


def total() -> int:
    return GLOBAL.total()
