"""Predictors for M-open streams.

* :class:`EDFPredictor` predicts with the empirical law of the data so far.
* :class:`CountMinSketch` keeps d x W counters indexed by 2-universal hashes
  ``((a*u + b) mod p) mod W`` with the Mersenne prime p = 2**61 - 1, and turns
  row-minimum counts into a next-outcome prediction.
* ``shtarkov_*`` compute the normalized maximum weighted likelihood joint
  over a finite alphabet and its one-step conditionals.

Sketch universes and Shtarkov alphabets are zero-based: items are 0..U-1.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import Discrete, Loss, Predictor, PredictiveDistribution, point_prediction

MERSENNE_61 = (1 << 61) - 1
_M61 = np.uint64(MERSENNE_61)
_LOW29 = np.uint64((1 << 29) - 1)
_LOW32 = np.uint64((1 << 32) - 1)
MAGIC = b"CMS1"
MAX_STRINGS = 10**6


class EDFPredictor(Predictor):
    """Empirical distribution of the outcomes seen so far.

    With no data the predictive is ``initial``; without one, predicting at
    n = 0 is an error.
    """

    def __init__(self, initial: Optional[PredictiveDistribution] = None, label: str = "edf"):
        self.initial = initial
        self.label = label
        self.reset()

    def reset(self):
        self._ys: list[float] = []

    def observe(self, x, y):
        self._ys.append(y)

    def predictive(self, x=None):
        if not self._ys:
            if self.initial is None:
                raise ValueError(f"{self.label}: EDF predictor needs an initial law before any data")
            return self.initial
        return Discrete(self._ys, np.ones(len(self._ys)))


def edf_predictor(initial: Optional[PredictiveDistribution] = None) -> EDFPredictor:
    return EDFPredictor(initial)


# ---------------------------------------------------------------------------
# 2-universal hashing modulo 2^61 - 1


def _mod61(x: np.ndarray) -> np.ndarray:
    x = (x & _M61) + (x >> np.uint64(61))
    x = (x & _M61) + (x >> np.uint64(61))
    return np.where(x >= _M61, x - _M61, x)


def mulmod61(a, u) -> np.ndarray:
    """(a * u) mod (2^61 - 1) for uint64 arrays with a, u < 2^61, without overflow."""
    a = np.asarray(a, dtype=np.uint64)
    u = np.asarray(u, dtype=np.uint64)
    a1, a0 = a >> np.uint64(32), a & _LOW32
    u1, u0 = u >> np.uint64(32), u & _LOW32
    # 2^64 = 8 (mod p)
    hi = _mod61((a1 * u1) << np.uint64(3))
    mid = a1 * u0 + a0 * u1
    mid = (mid >> np.uint64(29)) + ((mid & _LOW29) << np.uint64(32))
    lo = _mod61(a0 * u0)
    return _mod61(_mod61(hi + _mod61(mid)) + lo)


@dataclass(frozen=True)
class HashFamily:
    """d functions u -> ((a_j u + b_j) mod p) mod W, with a_j != 0."""

    a: tuple
    b: tuple
    width: int
    prime: int = MERSENNE_61

    @classmethod
    def draw(cls, d: int, width: int, seed: int) -> "HashFamily":
        rng = np.random.default_rng(seed)
        a = rng.integers(1, MERSENNE_61, size=d, dtype=np.int64)
        b = rng.integers(0, MERSENNE_61, size=d, dtype=np.int64)
        return cls(tuple(int(v) for v in a), tuple(int(v) for v in b), width)

    def __len__(self):
        return len(self.a)

    def hash_one(self, j: int, u: int) -> int:
        return ((self.a[j] * u + self.b[j]) % self.prime) % self.width

    def hash_rows(self, us: np.ndarray) -> np.ndarray:
        """(d, len(us)) matrix of bucket indices."""
        us = np.asarray(us, dtype=np.uint64)
        out = np.empty((len(self.a), us.size), dtype=np.int64)
        for j, (a, b) in enumerate(zip(self.a, self.b)):
            h = _mod61(mulmod61(np.uint64(a), us) + np.uint64(b))
            out[j] = (h % np.uint64(self.width)).astype(np.int64)
        return out


# ---------------------------------------------------------------------------
# Count-Min sketch


class CountMinSketch:
    """d x W counters; estimates never undercount and overcount by more than
    epsilon * n with probability at most delta."""

    def __init__(self, d: int, width: int, seed: int, universe: Optional[int] = None,
                 epsilon: Optional[float] = None, delta: Optional[float] = None):
        if d < 1 or width < 1:
            raise ValueError("sketch needs d >= 1 and W >= 1")
        if universe is not None and not 2 <= universe < MERSENNE_61:
            raise ValueError(f"universe size must lie in [2, 2^61 - 1), got {universe}")
        self.d = d
        self.width = width
        self.seed = seed
        self.universe = universe
        self.epsilon = epsilon
        self.delta = delta
        self.hashes = HashFamily.draw(d, width, seed)
        self.counters = np.zeros((d, width), dtype=np.uint64)
        self.n = 0

    @classmethod
    def from_error(cls, epsilon: float, delta: float, universe: int, seed: int) -> "CountMinSketch":
        if not 0 < epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
        if not 0 < delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {delta}")
        if universe < 2:
            raise ValueError(f"universe size must be >= 2, got {universe}")
        width = math.ceil(2.0 / epsilon)
        d = math.ceil(math.log2(1.0 / delta))
        return cls(d, width, seed, universe, epsilon, delta)

    @property
    def cells(self) -> int:
        return self.d * self.width

    def _check_items(self, us: np.ndarray) -> np.ndarray:
        us = np.asarray(us)
        if us.size and (us.min() < 0 or (self.universe is not None and us.max() >= self.universe)):
            raise ValueError(f"item outside the universe 0..{self.universe}")
        return us.astype(np.uint64)

    def update(self, u: int) -> None:
        self.update_many([u])

    def update_many(self, us: Sequence[int]) -> None:
        us = self._check_items(np.atleast_1d(us))
        if us.size == 0:
            return
        rows = self.hashes.hash_rows(us)
        for j in range(self.d):
            self.counters[j] += np.bincount(rows[j], minlength=self.width).astype(np.uint64)
        self.n += int(us.size)

    def estimate(self, u: int) -> int:
        return int(self.estimate_many([u])[0])

    def estimate_many(self, us: Sequence[int]) -> np.ndarray:
        us = self._check_items(np.atleast_1d(us))
        rows = self.hashes.hash_rows(us)
        vals = self.counters[np.arange(self.d)[:, None], rows]
        return vals.min(axis=0).astype(np.int64)

    def merge(self, other: "CountMinSketch") -> "CountMinSketch":
        """Sketch of the concatenated streams; both sketches must share d, W and seed."""
        if (self.d, self.width, self.seed) != (other.d, other.width, other.seed):
            raise ValueError("only sketches with identical d, W and seed can be merged")
        out = CountMinSketch(self.d, self.width, self.seed, self.universe, self.epsilon, self.delta)
        out.counters = self.counters + other.counters
        out.n = self.n + other.n
        return out

    def to_bytes(self) -> bytes:
        header = MAGIC + struct.pack("<4Q", self.d, self.width, self.n, self.seed)
        return header + self.counters.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, universe: Optional[int] = None) -> "CountMinSketch":
        if blob[:4] != MAGIC:
            raise ValueError("not a Count-Min sketch snapshot (bad magic)")
        d, width, n, seed = struct.unpack("<4Q", blob[4:36])
        body = blob[36:]
        if len(body) != 8 * d * width:
            raise ValueError(f"snapshot body is {len(body)} bytes, expected {8 * d * width}")
        sk = cls(d, width, seed, universe)
        sk.counters = np.frombuffer(body, dtype="<u8").reshape(d, width).astype(np.uint64)
        sk.n = n
        return sk

    def __eq__(self, other):
        return (
            isinstance(other, CountMinSketch)
            and (self.d, self.width, self.seed, self.n) == (other.d, other.width, other.seed, other.n)
            and np.array_equal(self.counters, other.counters)
        )

    __hash__ = None


def cms_new(epsilon: float, delta: float, universe: int, seed: int) -> CountMinSketch:
    return CountMinSketch.from_error(epsilon, delta, universe, seed)


def cms_update(sketch: CountMinSketch, u: int) -> None:
    sketch.update(u)


def cms_estimate(sketch: CountMinSketch, u: int) -> int:
    return sketch.estimate(u)


def cms_distribution(sketch: CountMinSketch, candidates: Sequence[int]) -> Discrete:
    """Min-count estimates over ``candidates``, normalized to a probability vector."""
    if len(candidates) == 0:
        raise ValueError("candidate set is empty")
    if sketch.n < 1:
        raise ValueError("sketch has seen no data")
    est = sketch.estimate_many(candidates).astype(float)
    if est.sum() <= 0:
        raise ValueError("all candidate estimates are zero")
    return Discrete(np.asarray(candidates, dtype=float), est)


def cms_predict_next(sketch: CountMinSketch, candidates: Sequence[int], loss: Loss) -> float:
    return point_prediction(cms_distribution(sketch, candidates), loss)


class CountMinPredictor(Predictor):
    def __init__(self, epsilon: float, delta: float, universe: int, seed: int,
                 candidates: Sequence[int], label: str = "count-min"):
        self.params = (epsilon, delta, universe, seed)
        self.candidates = list(candidates)
        self.label = label
        self.reset()

    def reset(self):
        self.sketch = cms_new(*self.params)

    def observe(self, x, y):
        self.sketch.update(int(y))

    def predictive(self, x=None):
        return cms_distribution(self.sketch, self.candidates)


# ---------------------------------------------------------------------------
# Shtarkov / normalized maximum weighted likelihood


Expert = Union[Sequence[float], Callable[[tuple], Sequence[float]]]


@dataclass
class ExpertSet:
    """Experts over the alphabet 0..A-1 with positive (unnormalized) weights.

    An expert is a fixed pmf (i.i.d. expert) or a callable mapping the
    prefix tuple to the next-symbol pmf.
    """

    alphabet: int
    weights: Sequence[float]
    experts: Sequence[Expert]

    def __post_init__(self):
        if len(self.weights) != len(self.experts) or not self.experts:
            raise ValueError("need one positive weight per expert")
        if any(not w > 0 for w in self.weights):
            raise ValueError("expert weights must be positive")
        for e in self.experts:
            if not callable(e):
                p = np.asarray(e, dtype=float)
                if p.shape != (self.alphabet,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                    raise ValueError("each i.i.d. expert must be a pmf over the alphabet")

    def log_weighted_joint(self, strings: np.ndarray) -> np.ndarray:
        """(K, N) matrix of log w(theta) + log p(y^n | theta) for each string row."""
        K = len(self.experts)
        N, n = strings.shape
        out = np.empty((K, N))
        for k, (w, e) in enumerate(zip(self.weights, self.experts)):
            if callable(e):
                vals = np.empty(N)
                for i, s in enumerate(map(tuple, strings)):
                    lp = 0.0
                    for t in range(n):
                        pmf = np.asarray(e(s[:t]), dtype=float)
                        if abs(pmf.sum() - 1.0) > 1e-12:
                            raise ValueError("expert pmf does not sum to one")
                        pt = pmf[s[t]]
                        lp = -math.inf if pt <= 0 else lp + math.log(pt)
                    vals[i] = lp
            else:
                with np.errstate(divide="ignore"):
                    lpmf = np.log(np.asarray(e, dtype=float))
                vals = lpmf[strings].sum(axis=1) if n else np.zeros(N)
            out[k] = math.log(w) + vals
        return out


def all_strings(alphabet: int, n: int) -> np.ndarray:
    if alphabet**n > MAX_STRINGS:
        raise ValueError(f"{alphabet}^{n} strings exceed the enumeration cap of {MAX_STRINGS}")
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(range(alphabet), repeat=n)), dtype=np.int64)


@dataclass(frozen=True)
class ShtarkovJoint:
    strings: np.ndarray  # (A^n, n), lexicographic order
    probs: np.ndarray
    log_normalizer: float  # log sum_z sup_theta w p(z | theta)
    alphabet: int

    @property
    def horizon(self) -> int:
        return self.strings.shape[1]

    def index(self, s: Sequence[int]) -> int:
        i = 0
        for c in s:
            i = i * self.alphabet + int(c)
        return i

    def prob(self, s: Sequence[int]) -> float:
        return float(self.probs[self.index(s)])

    def as_dict(self) -> dict:
        return {tuple(s): float(p) for s, p in zip(self.strings.tolist(), self.probs)}

    def marginal(self, m: int) -> np.ndarray:
        """Probabilities of the length-m prefixes (lexicographic)."""
        return self.probs.reshape(self.alphabet**m, -1).sum(axis=1)


def shtarkov_joint(experts: ExpertSet, n: int) -> ShtarkovJoint:
    """q(y^n) proportional to sup_theta w(theta) p(y^n | theta) over all strings of length n."""
    strings = all_strings(experts.alphabet, n)
    sup = experts.log_weighted_joint(strings).max(axis=0)
    top = sup.max()
    logz = top + math.log(math.fsum(np.exp(sup - top)))
    probs = np.exp(sup - logz)
    return ShtarkovJoint(strings, probs, logz, experts.alphabet)


def max_regret(q: np.ndarray, experts: ExpertSet, n: int) -> float:
    """max over strings of log sup_theta w p(y^n | theta) - log q(y^n)."""
    strings = all_strings(experts.alphabet, n)
    sup = experts.log_weighted_joint(strings).max(axis=0)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore"):
        lq = np.log(q)
    live = np.isfinite(sup)
    if np.any(~np.isfinite(lq[live])):
        return math.inf
    return float(np.max(sup[live] - lq[live]))


def _conditional(joint: ShtarkovJoint, prefix: Sequence[int]) -> Discrete:
    A = joint.alphabet
    m = len(prefix)
    probs = joint.marginal(m + 1)
    base = 0
    for c in prefix:
        base = base * A + int(c)
    block = probs[base * A: base * A + A]
    if block.sum() <= 0:
        raise ValueError(f"prefix {tuple(prefix)} has zero Shtarkov mass")
    return Discrete(np.arange(A), block)


def shtarkov_predict(experts: ExpertSet, prefix: Sequence[int], horizon: Optional[int] = None) -> Discrete:
    """Next-symbol law from the Shtarkov joint at a fixed ``horizon`` (default len(prefix) + 1)."""
    m = len(prefix)
    horizon = m + 1 if horizon is None else horizon
    if horizon <= m:
        raise ValueError("horizon must exceed the prefix length")
    if any(not 0 <= int(c) < experts.alphabet for c in prefix):
        raise ValueError("prefix symbol outside the alphabet")
    return _conditional(shtarkov_joint(experts, horizon), prefix)


class ShtarkovPredictor(Predictor):
    """Sequential predictor from a single Shtarkov joint at a fixed horizon."""

    def __init__(self, experts: ExpertSet, horizon: int, label: str = "shtarkov"):
        self.experts = experts
        self.horizon = horizon
        self.label = label
        self.joint = shtarkov_joint(experts, horizon)
        self.reset()

    def reset(self):
        self._prefix: list[int] = []

    def observe(self, x, y):
        y = int(y)
        if not 0 <= y < self.experts.alphabet:
            raise ValueError(f"outcome {y} outside the alphabet")
        self._prefix.append(y)

    def predictive(self, x=None):
        if len(self._prefix) >= self.horizon:
            raise ValueError(f"{self.label}: horizon {self.horizon} exhausted")
        return _conditional(self.joint, self._prefix)
