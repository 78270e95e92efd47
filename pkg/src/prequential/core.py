"""Shared vocabulary: predictive laws, intervals, losses and the predictor contract.

Outcomes are plain Python numbers: floats for real outcomes, ints for
category indices and counts.  A :class:`PredictiveDistribution` is an
immutable one-step-ahead law; a :class:`Predictor` is a sequential state
machine that is fed ``observe(x, y)`` and queried with ``predictive(x)``.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

QUANTILE_TOL = 1e-9


class ImproperPredictiveError(ValueError):
    """Raised when a predictive law cannot produce finite summaries."""


class PredictiveDistribution(abc.ABC):
    """A univariate one-step-ahead law.

    Subclasses are immutable; all randomness comes in through ``rng``.
    """

    discrete: bool = False

    @abc.abstractmethod
    def density(self, y: float) -> float:
        """Density (continuous) or probability mass (discrete) at ``y``."""

    @abc.abstractmethod
    def cdf(self, y: float) -> float:
        ...

    def cdf_left(self, y: float) -> float:
        """P(Y < y).  Equal to ``cdf`` for continuous laws."""
        return self.cdf(y)

    @abc.abstractmethod
    def mean(self) -> float:
        ...

    @abc.abstractmethod
    def variance(self) -> float:
        ...

    @abc.abstractmethod
    def mode(self) -> float:
        ...

    @abc.abstractmethod
    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        ...

    def quantile(self, p: float) -> float:
        """Smallest y with cdf(y) >= p, by bracketed bisection on the cdf."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"quantile level must lie in [0, 1], got {p}")
        return _bisect_quantile(self.cdf, p, self._bracket_hint())

    def _bracket_hint(self) -> tuple[float, float]:
        m = self.mean()
        v = self.variance()
        s = math.sqrt(v) if math.isfinite(v) and v > 0 else 1.0
        if not math.isfinite(m):
            m = 0.0
        return m - s, m + s


def _bisect_quantile(cdf, p: float, hint: tuple[float, float], tol: float = QUANTILE_TOL) -> float:
    lo, hi = hint
    width = max(hi - lo, 1.0)
    for _ in range(2000):
        if cdf(lo) < p:
            break
        lo -= width
        width *= 2.0
    else:
        return -math.inf
    width = max(hi - lo, 1.0)
    for _ in range(2000):
        if cdf(hi) >= p:
            break
        hi += width
        width *= 2.0
    else:
        return math.inf
    # invariant: cdf(lo) < p <= cdf(hi)
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)) and hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if cdf(mid) >= p:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class Normal(PredictiveDistribution):
    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"Normal scale must be positive, got {self.scale}")

    def density(self, y):
        z = (y - self.loc) / self.scale
        return math.exp(-0.5 * z * z) / (self.scale * math.sqrt(2.0 * math.pi))

    def logdensity(self, y):
        z = (y - self.loc) / self.scale
        return -0.5 * z * z - math.log(self.scale) - 0.5 * math.log(2.0 * math.pi)

    def cdf(self, y):
        return float(special.ndtr((y - self.loc) / self.scale))

    def quantile(self, p):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"quantile level must lie in [0, 1], got {p}")
        return self.loc + self.scale * float(special.ndtri(p))

    def mean(self):
        return self.loc

    def variance(self):
        return self.scale**2

    def mode(self):
        return self.loc

    def sample(self, rng, size=None):
        return rng.normal(self.loc, self.scale, size)


@dataclass(frozen=True)
class StudentT(PredictiveDistribution):
    df: float
    loc: float
    scale: float

    def __post_init__(self):
        if not (self.df > 0 and self.scale > 0):
            raise ValueError("StudentT needs df > 0 and scale > 0")

    def logdensity(self, y):
        nu = self.df
        z = (y - self.loc) / self.scale
        return (
            special.gammaln((nu + 1) / 2)
            - special.gammaln(nu / 2)
            - 0.5 * math.log(nu * math.pi)
            - math.log(self.scale)
            - (nu + 1) / 2 * math.log1p(z * z / nu)
        )

    def density(self, y):
        return math.exp(self.logdensity(y))

    def cdf(self, y):
        return float(special.stdtr(self.df, (y - self.loc) / self.scale))

    def quantile(self, p):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"quantile level must lie in [0, 1], got {p}")
        return self.loc + self.scale * float(special.stdtrit(self.df, p))

    def mean(self):
        return self.loc if self.df > 1 else math.inf

    def variance(self):
        if self.df > 2:
            return self.scale**2 * self.df / (self.df - 2)
        return math.inf

    def mode(self):
        return self.loc

    def sample(self, rng, size=None):
        return self.loc + self.scale * rng.standard_t(self.df, size)


@dataclass(frozen=True)
class Uniform(PredictiveDistribution):
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("Uniform needs hi > lo")

    def density(self, y):
        return 1.0 / (self.hi - self.lo) if self.lo <= y <= self.hi else 0.0

    def cdf(self, y):
        return min(1.0, max(0.0, (y - self.lo) / (self.hi - self.lo)))

    def quantile(self, p):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"quantile level must lie in [0, 1], got {p}")
        return self.lo + p * (self.hi - self.lo)

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def variance(self):
        return (self.hi - self.lo) ** 2 / 12.0

    def mode(self):
        return self.mean()

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size)


class Discrete(PredictiveDistribution):
    """Finite-support law.  Support points are sorted and merged on construction."""

    discrete = True

    def __init__(self, support: Sequence[float], masses: Sequence[float]):
        support = np.asarray(support, dtype=float)
        masses = np.asarray(masses, dtype=float)
        if support.shape != masses.shape or support.ndim != 1 or support.size == 0:
            raise ValueError("support and masses must be equal-length, nonempty 1-D")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("masses must be finite and nonnegative")
        total = math.fsum(masses)
        if total <= 0:
            raise ValueError("masses sum to zero")
        uniq, inv = np.unique(support, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, masses)
        self.support = uniq
        self.masses = merged / total
        self._cum = np.cumsum(self.masses)
        self._cum[-1] = 1.0

    def __repr__(self):
        pairs = ", ".join(f"{s:g}: {m:.6g}" for s, m in zip(self.support, self.masses))
        return f"Discrete({{{pairs}}})"

    def __eq__(self, other):
        return (
            isinstance(other, Discrete)
            and np.array_equal(self.support, other.support)
            and np.array_equal(self.masses, other.masses)
        )

    __hash__ = None

    def density(self, y):
        i = np.searchsorted(self.support, y)
        if i < self.support.size and self.support[i] == y:
            return float(self.masses[i])
        return 0.0

    def cdf(self, y):
        i = np.searchsorted(self.support, y, side="right")
        return float(self._cum[i - 1]) if i > 0 else 0.0

    def cdf_left(self, y):
        i = np.searchsorted(self.support, y, side="left")
        return float(self._cum[i - 1]) if i > 0 else 0.0

    def quantile(self, p):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"quantile level must lie in [0, 1], got {p}")
        i = int(np.searchsorted(self._cum, p - 1e-15, side="left"))
        return float(self.support[min(i, self.support.size - 1)])

    def mean(self):
        return float(np.dot(self.support, self.masses))

    def variance(self):
        m = self.mean()
        return float(np.dot((self.support - m) ** 2, self.masses))

    def mode(self):
        # ties go to the smallest support point
        return float(self.support[int(np.argmax(self.masses))])

    def sample(self, rng, size=None):
        return rng.choice(self.support, size=size, p=self.masses)


def point_mass(value: float) -> Discrete:
    return Discrete([value], [1.0])


class Mixture(PredictiveDistribution):
    """Finite mixture of continuous laws.  Use :func:`mixture` to build one."""

    def __init__(self, components: Sequence[PredictiveDistribution], weights: Sequence[float]):
        self.components = tuple(components)
        self.weights = np.asarray(weights, dtype=float)

    def density(self, y):
        return math.fsum(w * c.density(y) for w, c in zip(self.weights, self.components))

    def cdf(self, y):
        return min(1.0, math.fsum(w * c.cdf(y) for w, c in zip(self.weights, self.components)))

    def mean(self):
        return math.fsum(w * c.mean() for w, c in zip(self.weights, self.components) if w > 0)

    def variance(self):
        m = self.mean()
        return math.fsum(
            w * (c.variance() + (c.mean() - m) ** 2)
            for w, c in zip(self.weights, self.components)
            if w > 0
        )

    def mode(self):
        lo = min(c.quantile(1e-4) for c, w in zip(self.components, self.weights) if w > 0)
        hi = max(c.quantile(1 - 1e-4) for c, w in zip(self.components, self.weights) if w > 0)
        grid = np.linspace(lo, hi, 4001)
        dens = np.array([self.density(g) for g in grid])
        i = int(np.argmax(dens))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        # golden-section refinement around the grid maximum
        gr = (math.sqrt(5) - 1) / 2
        for _ in range(80):
            c1 = b - gr * (b - a)
            c2 = a + gr * (b - a)
            if self.density(c1) >= self.density(c2):
                b = c2
            else:
                a = c1
        return 0.5 * (a + b)

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty(n)
        for k, c in enumerate(self.components):
            sel = idx == k
            if sel.any():
                out[sel] = c.sample(rng, int(sel.sum()))
        return float(out[0]) if size is None else out

    def _bracket_hint(self):
        live = [c for c, w in zip(self.components, self.weights) if w > 0]
        los, his = zip(*(c._bracket_hint() for c in live))
        return min(los), max(his)


def mixture(components: Sequence[PredictiveDistribution], weights: Sequence[float]) -> PredictiveDistribution:
    """Weighted mixture; discrete components collapse to a single :class:`Discrete`."""
    weights = np.asarray(weights, dtype=float)
    if len(components) != weights.size or weights.size == 0:
        raise ValueError("need one weight per component")
    if np.any(weights < 0) or abs(math.fsum(weights) - 1.0) > 1e-9:
        raise ValueError("mixture weights must be a probability vector")
    if len(components) == 1:
        return components[0]
    kinds = {c.discrete for c in components}
    if kinds == {True}:
        support = np.concatenate([c.support for c in components])
        masses = np.concatenate([w * c.masses for w, c in zip(weights, components)])
        return Discrete(support, masses)
    if kinds == {False}:
        return Mixture(components, weights / weights.sum())
    raise ValueError("cannot mix discrete and continuous components")


@dataclass(frozen=True)
class PredictionInterval:
    lo: float
    hi: float
    level: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"interval has lo > hi: [{self.lo}, {self.hi}]")
        if not 0.0 < self.level < 1.0:
            raise ValueError("interval level must lie in (0, 1)")

    def covers(self, y: float) -> bool:
        return self.lo <= y <= self.hi


def predictive_interval(dist: PredictiveDistribution, alpha: float) -> PredictionInterval:
    """Equal-tailed ``1 - alpha`` interval from the predictive quantiles."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    lo = dist.quantile(alpha / 2)
    hi = dist.quantile(1 - alpha / 2)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ImproperPredictiveError(f"non-finite predictive quantiles ({lo}, {hi})")
    return PredictionInterval(lo, hi, 1.0 - alpha)


@dataclass(frozen=True)
class Loss:
    """A loss on (prediction, outcome).

    ``kind`` is one of ``squared``, ``absolute``, ``check`` (with ``tau``) or
    ``pi`` (zero-one loss on a prediction interval at ``level``).  The interval
    loss is 1 when the outcome lands in the interval, so its running average
    is the empirical coverage.
    """

    kind: str
    tau: float = 0.5
    level: float = 0.9

    KINDS = ("squared", "absolute", "check", "pi")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "check" and not 0.0 < self.tau < 1.0:
            raise ValueError("check loss needs tau in (0, 1)")
        if self.kind == "pi" and not 0.0 < self.level < 1.0:
            raise ValueError("interval loss needs level in (0, 1)")

    def evaluate(self, prediction, outcome: float) -> float:
        if self.kind == "pi":
            if not isinstance(prediction, PredictionInterval):
                raise TypeError("interval loss needs a PredictionInterval prediction")
            return 1.0 if prediction.covers(outcome) else 0.0
        r = outcome - prediction
        if self.kind == "squared":
            return r * r
        if self.kind == "absolute":
            return abs(r)
        return r * (self.tau - (1.0 if r < 0 else 0.0))


SQUARED = Loss("squared")
ABSOLUTE = Loss("absolute")


def check_loss(tau: float) -> Loss:
    return Loss("check", tau=tau)


def pi_loss(level: float) -> Loss:
    return Loss("pi", level=level)


def point_prediction(dist: PredictiveDistribution, loss: Loss) -> float:
    """Bayes action for a single point prediction under ``loss``."""
    if loss.kind == "squared":
        m = dist.mean()
        if not math.isfinite(m):
            raise ImproperPredictiveError("predictive mean is infinite; squared loss has no minimiser")
        return m
    if loss.kind == "absolute":
        return dist.quantile(0.5)
    if loss.kind == "check":
        return dist.quantile(loss.tau)
    return dist.mode()


def pit(dist: PredictiveDistribution, y: float, rng: Optional[np.random.Generator] = None) -> float:
    """Probability integral transform of ``y``.

    Discrete laws use the randomized transform F(y-) + V (F(y) - F(y-)),
    which needs ``rng``.
    """
    if not dist.discrete:
        return dist.cdf(y)
    if rng is None:
        raise ValueError("discrete predictive needs an rng for the randomized PIT")
    lo = dist.cdf_left(y)
    hi = dist.cdf(y)
    return lo + rng.uniform() * (hi - lo)


# ---------------------------------------------------------------------------
# observations and the predictor contract

OUTCOME_KINDS = ("real", "category", "count")


@dataclass(frozen=True)
class Record:
    t: int
    x: Optional[tuple[float, ...]]
    y: float


@dataclass
class ObservationStream:
    """Ordered (t, x, y) records with a fixed covariate arity and outcome kind."""

    records: list[Record] = field(default_factory=list)
    kind: str = "real"
    alphabet: Optional[int] = None

    def __post_init__(self):
        if self.kind not in OUTCOME_KINDS:
            raise ValueError(f"unknown outcome kind {self.kind!r}")
        recs, self.records = self.records, []
        for r in recs:
            self.append(r)

    @property
    def arity(self) -> Optional[int]:
        if not self.records or self.records[0].x is None:
            return None
        return len(self.records[0].x)

    def append(self, rec: Record) -> None:
        if self.records:
            prev = self.records[-1]
            if rec.t <= prev.t:
                raise ValueError(f"step index must increase strictly: {rec.t} after {prev.t}")
            if (rec.x is None) != (prev.x is None):
                raise ValueError(f"row t={rec.t}: covariates present on some rows but not others")
            if rec.x is not None and len(rec.x) != len(prev.x):
                raise ValueError(f"row t={rec.t}: expected {len(prev.x)} covariates, got {len(rec.x)}")
        self.records.append(Record(rec.t, rec.x, check_outcome(rec.y, self.kind, self.alphabet)))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def check_outcome(y, kind: str, alphabet: Optional[int] = None):
    if kind == "real":
        y = float(y)
        if not math.isfinite(y):
            raise ValueError(f"non-finite outcome {y}")
        return y
    if isinstance(y, float) and not y.is_integer():
        raise ValueError(f"{kind} outcome must be an integer, got {y}")
    y = int(y)
    if kind == "count" and y < 0:
        raise ValueError(f"count outcome must be >= 0, got {y}")
    if kind == "category" and (alphabet is None or not 1 <= y <= alphabet):
        raise ValueError(f"category outcome {y} outside alphabet 1..{alphabet}")
    return y


class Predictor(abc.ABC):
    """Sequential predictor: ``predictive`` before ``observe``, repeatedly."""

    label: str = "predictor"

    @abc.abstractmethod
    def observe(self, x, y) -> None:
        ...

    @abc.abstractmethod
    def predictive(self, x=None) -> PredictiveDistribution:
        ...

    @abc.abstractmethod
    def reset(self) -> None:
        ...

    def refit(self, history: Sequence[tuple]) -> None:
        """Rebuild from scratch on ``history`` (pairs of x, y)."""
        self.reset()
        for x, y in history:
            self.observe(x, y)
