"""Prequential scoring: log score, forecaster comparison, PE/CPE and PIT uniformity."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Loss, PredictiveDistribution

SCORES = ("log", "brier", "squared", "absolute", "pi")


def log_score(dist: PredictiveDistribution, y: float) -> float:
    """Negative log predictive density (or mass) at ``y``; ``inf`` when y is out of support."""
    logdensity = getattr(dist, "logdensity", None)
    if logdensity is not None:
        return -float(logdensity(y))
    d = dist.density(y)
    if d <= 0.0:
        return math.inf
    return -math.log(d)


def brier_score(dist: PredictiveDistribution, y: float) -> float:
    """Quadratic score sum_k (p_k - 1{y = k})^2 for a discrete predictive."""
    if not dist.discrete:
        raise ValueError("Brier score needs a discrete predictive")
    ind = (dist.support == y).astype(float)
    s = float(np.sum((dist.masses - ind) ** 2))
    if not ind.any():
        s += 1.0
    return s


@dataclass
class PrequentialRecord:
    t: int
    predictor: str
    point: float
    lo: float
    hi: float
    level: float
    log_score: float
    loss_sq: float
    loss_abs: float
    pit: Optional[float]
    covered: int

    @property
    def out_of_support(self) -> bool:
        return math.isinf(self.log_score)


def cumulative_log_score(records: Sequence) -> float:
    """Sum of per-step log scores; ``inf`` if any step fell outside its predictive's support.

    Accepts records (anything with a ``log_score`` attribute) or bare floats.
    """
    vals = [getattr(r, "log_score", r) for r in records]
    if any(math.isinf(v) for v in vals):
        return math.inf
    return math.fsum(vals)


def out_of_support_steps(records: Sequence) -> list[int]:
    return [i for i, r in enumerate(records) if math.isinf(getattr(r, "log_score", r))]


@dataclass(frozen=True)
class ScoreComparison:
    """log r - log q summed over the stream.

    Positive values mean R put more predictive probability on the realized
    outcomes than Q did.
    """

    total: float
    mean: float
    n: int

    orientation = "positive favors R (sum of log r/q)"

    def __float__(self):
        return self.total


def compare_forecasters(records_q: Sequence, records_r: Sequence) -> ScoreComparison:
    lq = [getattr(r, "log_score", r) for r in records_q]
    lr = [getattr(r, "log_score", r) for r in records_r]
    if len(lq) != len(lr):
        raise ValueError(f"streams differ in length: {len(lq)} vs {len(lr)}")
    if not lq:
        raise ValueError("empty streams")
    # log scores are negated log densities
    diffs = [sq - sr for sq, sr in zip(lq, lr)]
    if any(math.isnan(v) for v in diffs):
        raise ValueError("both forecasters out of support at the same step")
    total = math.fsum(diffs)
    return ScoreComparison(total, total / len(diffs), len(diffs))


def pe(prediction, y: float, loss: Loss) -> float:
    return loss.evaluate(prediction, y)


def cpe(losses: Sequence[float]) -> float:
    if len(losses) == 0:
        raise ValueError("CPE of an empty loss sequence")
    return math.fsum(losses) / len(losses)


class CPETracker:
    """Running CPE plus a trailing window of the last ``window`` losses."""

    def __init__(self, window: int = 1):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._sum = 0.0
        self._comp = 0.0
        self.n = 0
        self.ring: deque = deque(maxlen=window)

    def add(self, loss: float) -> None:
        # Neumaier summation keeps cpe reproducible from the records
        t = self._sum + loss
        if abs(self._sum) >= abs(loss):
            self._comp += (self._sum - t) + loss
        else:
            self._comp += (loss - t) + self._sum
        self._sum = t
        self.n += 1
        self.ring.append(loss)

    @property
    def cpe(self) -> float:
        if self.n == 0:
            raise ValueError("CPE of an empty loss sequence")
        return (self._sum + self._comp) / self.n

    @property
    def window_full(self) -> bool:
        return len(self.ring) == self.window

    @property
    def window_cpe(self) -> float:
        return math.fsum(self.ring) / len(self.ring)

    def clear_window(self) -> None:
        self.ring.clear()


def kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """Asymptotic Kolmogorov tail P(K > lam) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2)."""
    if lam <= 0:
        return 1.0
    if lam < 0.2:
        # the alternating series converges slowly here; the tail is 1 to double precision
        return 1.0
    s = 0.0
    for k in range(1, terms + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        s += term if k % 2 else -term
        if term < 1e-18:
            break
    return min(1.0, max(0.0, 2.0 * s))


def ks_statistic(us: Sequence[float]) -> float:
    u = np.sort(np.asarray(us, dtype=float))
    n = u.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - u), np.max(u - (i - 1) / n)))


def pit_uniformity(us: Sequence[float]) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test of PIT values against Uniform[0, 1].

    Returns (D_n, asymptotic p-value).
    """
    u = np.asarray(us, dtype=float)
    if u.size < 5:
        raise ValueError(f"need at least 5 PIT values, got {u.size}")
    if np.any((u < 0) | (u > 1)) or not np.all(np.isfinite(u)):
        raise ValueError("PIT values must lie in [0, 1]")
    d = ks_statistic(u)
    return d, kolmogorov_sf(math.sqrt(u.size) * d)
