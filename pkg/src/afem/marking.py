"""Dörfler marking and its variants."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Strategy(enum.Enum):
    STANDARD = "standard"
    EXPANDED = "expanded"
    MAXGUARD = "maxguard"


@dataclass(frozen=True)
class MarkingStrategy:
    kind: Strategy = Strategy.STANDARD
    theta: float = 0.5
    expanded_n: int = 1

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("theta must lie in (0, 1]")
        if self.expanded_n < 1:
            raise ValueError("expanded_n must be >= 1")
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", Strategy(self.kind))


def _eta_sq(indicators) -> np.ndarray:
    return np.asarray(getattr(indicators, "eta_sq", indicators), dtype=float)


def doerfler_mark(indicators, theta: float) -> np.ndarray:
    """Minimal set ``M`` with ``theta * sum(eta^2) <= sum_M eta^2``.

    Greedy prefix of the indicators sorted descending (ties by element id),
    which is exactly minimal. Zero indicators are never marked.
    """
    if not (0.0 < theta <= 1.0):
        raise ValueError("theta must lie in (0, 1]")
    e = _eta_sq(indicators)
    if e.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(e.size), -e))
    csum = np.cumsum(e[order])
    total = csum[-1]
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    k = int(np.searchsorted(csum, theta * total, side="left")) + 1
    k = min(k, e.size)
    return np.sort(order[:k])


def expanded_doerfler_mark(indicators, areas, theta: float, n: int = 1) -> np.ndarray:
    """Dörfler set united with the ``n`` largest elements (area ties by id)."""
    base = doerfler_mark(indicators, theta)
    if len(base) == 0:
        return base
    n = max(1, min(int(n), len(base)))
    a = np.asarray(areas, dtype=float)
    largest = np.lexsort((np.arange(a.size), -a))[:n]
    return np.union1d(base, largest)


def maxguard_mark(history, indicators, theta: float) -> np.ndarray:
    """Mark everything whenever ``eta`` exceeds every earlier estimator value."""
    e = _eta_sq(indicators)
    eta = float(np.sqrt(e.sum()))
    past = list(history) if len(history) else [1.0]
    if eta > max(past):
        return np.arange(e.size)
    return doerfler_mark(e, theta)


def mark(strategy: MarkingStrategy, indicators, areas, history) -> np.ndarray:
    if strategy.kind is Strategy.STANDARD:
        return doerfler_mark(indicators, strategy.theta)
    if strategy.kind is Strategy.EXPANDED:
        return expanded_doerfler_mark(indicators, areas, strategy.theta, strategy.expanded_n)
    return maxguard_mark(history, indicators, strategy.theta)


def doerfler_holds(indicators, marked, theta: float) -> bool:
    e = _eta_sq(indicators)
    return bool(theta * e.sum() <= e[np.asarray(marked, dtype=np.int64)].sum() * (1 + 1e-14))
