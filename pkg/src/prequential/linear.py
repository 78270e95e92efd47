"""Bayesian linear regression under Zellner's g-prior, with submodel enumeration.

The intercept is always present with a flat prior and sigma^2 gets the
Jeffreys prior 1/sigma^2.  Covariates are centered internally, so the
intercept posterior is centered at the sample mean of y in every submodel.
A mask is a tuple of 0/1 flags over the d covariates (intercept excluded).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import special

from .core import Predictor, StudentT

MAX_ENUM_D = 20

Mask = tuple


class RankDeficiencyError(ValueError):
    pass


class GraphicalStructureError(ValueError):
    """The median probability model is not among the fitted submodels."""


@dataclass(frozen=True)
class DesignData:
    X: np.ndarray
    y: np.ndarray
    intercept: bool = True

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if not self.intercept:
            raise ValueError("the g-prior model always carries an intercept")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _check_mask(data: DesignData, mask) -> tuple:
    mask = tuple(int(b) for b in mask)
    if len(mask) != data.d or any(b not in (0, 1) for b in mask):
        raise ValueError(f"mask must be {data.d} flags in {{0, 1}}, got {mask}")
    return mask


def _masked(data: DesignData, mask: tuple):
    idx = [j for j, b in enumerate(mask) if b]
    Xm = data.X[:, idx]
    means = Xm.mean(axis=0)
    Xc = Xm - means
    if idx:
        if data.n < len(idx) + 2:
            raise RankDeficiencyError(
                f"n={data.n} is too small for {len(idx)} covariates (need n >= p + 2)"
            )
        rank = 0
        for k in range(len(idx)):
            r = np.linalg.matrix_rank(Xc[:, : k + 1])
            if r == rank:
                raise RankDeficiencyError(
                    f"masked design is rank deficient: column x{idx[k] + 1} is constant "
                    f"or a combination of {['x%d' % (i + 1) for i in idx[:k]]}"
                )
            rank = r
    return idx, Xc, means


@dataclass(frozen=True)
class LinearPosterior:
    mask: tuple
    intercept: float  # posterior mean of the intercept (= mean of y)
    coef_mean: np.ndarray  # posterior mean of the included slopes
    coef_cov_scale: np.ndarray  # Cov(beta | sigma^2, D) / sigma^2
    shape: float  # sigma^2 | D ~ InvGamma(shape, rate)
    rate: float
    g: float
    col_means: np.ndarray
    n: int
    xtx_inv: np.ndarray

    @property
    def columns(self) -> list[int]:
        return [j for j, b in enumerate(self.mask) if b]

    def full_coef(self) -> np.ndarray:
        """Slopes padded with zeros to length d."""
        out = np.zeros(len(self.mask))
        out[self.columns] = self.coef_mean
        return out

    def predict(self, x) -> np.ndarray:
        """Posterior mean of E(Y | x); ``x`` is one row or a matrix of raw covariates."""
        x = np.asarray(x, dtype=float)
        xs = np.atleast_2d(x)[:, self.columns] - self.col_means
        out = self.intercept + xs @ self.coef_mean
        return out if x.ndim == 2 else float(out[0])

    def predictive(self, x) -> StudentT:
        x = np.asarray(x, dtype=float)
        xs = x[self.columns] - self.col_means
        lev = 1.0 / self.n + float(xs @ self.coef_cov_scale @ xs)
        s2 = self.rate / self.shape
        return StudentT(2 * self.shape, self.predict(x), math.sqrt(s2 * (1.0 + lev)))

    def sample(self, rng: np.random.Generator, size: int):
        """Draws of (intercept, slopes, sigma^2) from the joint posterior."""
        s2 = self.rate / rng.gamma(self.shape, size=size)
        b0 = rng.normal(self.intercept, np.sqrt(s2 / self.n))
        p = self.coef_mean.size
        if p:
            L = np.linalg.cholesky(self.coef_cov_scale)
            z = rng.standard_normal((size, p))
            beta = self.coef_mean + np.sqrt(s2)[:, None] * (z @ L.T)
        else:
            beta = np.zeros((size, 0))
        return b0, beta, s2


def fit_submodel(data: DesignData, mask, g: Optional[float] = None) -> LinearPosterior:
    mask = _check_mask(data, mask)
    g = float(data.n if g is None else g)
    if not g > 0:
        raise ValueError("g must be positive")
    idx, Xc, means = _masked(data, mask)
    n = data.n
    ybar = float(data.y.mean())
    yc = data.y - ybar
    if idx:
        xtx = Xc.T @ Xc
        xtx_inv = np.linalg.inv(xtx)
        xtx_inv = 0.5 * (xtx_inv + xtx_inv.T)
        ols = np.linalg.solve(xtx, Xc.T @ yc)
        resid = yc - Xc @ ols
        rss = float(resid @ resid)
        ssr = float(ols @ xtx @ ols)
    else:
        xtx_inv = np.zeros((0, 0))
        ols = np.zeros(0)
        rss = float(yc @ yc)
        ssr = 0.0
    shrink = g / (1.0 + g)
    q = rss + ssr / (1.0 + g)
    return LinearPosterior(
        mask=mask,
        intercept=ybar,
        coef_mean=shrink * ols,
        coef_cov_scale=shrink * xtx_inv,
        shape=(n - 1) / 2.0,
        rate=q / 2.0,
        g=g,
        col_means=means,
        n=n,
        xtx_inv=xtx_inv,
    )


def log_marginal_submodel(data: DesignData, mask, g: Optional[float] = None) -> float:
    """log p(y | mask) with flat intercept prior, Jeffreys sigma prior and a g-prior on the slopes.

    The flat/Jeffreys priors are improper, so the value is meaningful only up
    to a constant shared by all masks; differences are log Bayes factors.
    """
    post = fit_submodel(data, mask, g)
    n = data.n
    p = post.coef_mean.size
    q = 2.0 * post.rate
    h = (n - 1) / 2.0
    return float(
        -h * math.log(2 * math.pi)
        - 0.5 * math.log(n)
        - 0.5 * p * math.log1p(post.g)
        + special.gammaln(h)
        - h * math.log(q / 2.0)
    )


def all_masks(d: int) -> list[tuple]:
    if d > MAX_ENUM_D:
        raise ValueError(
            f"full enumeration is capped at d <= {MAX_ENUM_D} (got d={d}); pass an explicit mask subset"
        )
    return [tuple(m) for m in itertools.product((0, 1), repeat=d)]


def mask_prior(masks: Sequence[tuple], kind: str = "uniform") -> np.ndarray:
    """Across-mask prior weights, normalized over ``masks``.

    ``size`` puts weight 1 / C(d, |mask|) on each mask so every model size gets equal mass.
    """
    if kind == "uniform":
        w = np.ones(len(masks))
    elif kind == "size":
        w = np.array([1.0 / math.comb(len(m), sum(m)) for m in masks])
    else:
        raise ValueError(f"unknown mask prior {kind!r}")
    return w / w.sum()


def mask_posterior_weights(
    data: DesignData,
    g: Optional[float] = None,
    masks: Optional[Sequence[tuple]] = None,
    prior: str = "uniform",
) -> dict[tuple, float]:
    """Posterior probabilities over ``masks`` (all 2^d masks by default)."""
    masks = all_masks(data.d) if masks is None else [_check_mask(data, m) for m in masks]
    logml = np.array([log_marginal_submodel(data, m, g) for m in masks])
    logw = logml + np.log(mask_prior(masks, prior))
    w = np.exp(logw - special.logsumexp(logw))
    return dict(zip(masks, w / w.sum()))


def inclusion_probabilities(weights: Mapping[tuple, float]) -> np.ndarray:
    """p_j = total posterior weight of masks that include covariate j."""
    if not weights:
        raise ValueError("no mask weights given")
    ws = np.array(list(weights.values()), dtype=float)
    if np.any(ws < 0) or abs(math.fsum(ws) - 1.0) > 1e-9:
        raise ValueError(f"mask weights must be nonnegative and sum to 1 (sum={math.fsum(ws)})")
    M = np.array(list(weights.keys()), dtype=float)
    return ws @ M


def median_mask(p: Sequence[float]) -> tuple:
    return tuple(int(pj >= 0.5) for pj in p)


def median_probability_model(
    p: Sequence[float], posteriors: Mapping[tuple, LinearPosterior]
) -> tuple[tuple, Callable]:
    """The mask of covariates with inclusion probability >= 1/2 and its posterior-mean predictor."""
    mask = median_mask(p)
    if mask not in posteriors:
        raise GraphicalStructureError(
            f"median probability model {mask} was not fitted; the model list lacks graphical structure"
        )
    return mask, posteriors[mask].predict


class GPriorPredictor(Predictor):
    """Sequential g-prior regression on a fixed mask, refit from the full history each step."""

    def __init__(self, mask: Optional[Sequence[int]] = None, g: Optional[float] = None, label: str = "g-prior"):
        self.mask = None if mask is None else tuple(mask)
        self.g = g
        self.label = label
        self.reset()

    def reset(self):
        self._X: list = []
        self._y: list = []

    def observe(self, x, y):
        self._X.append(tuple(x))
        self._y.append(float(y))

    def predictive(self, x=None):
        if x is None:
            raise ValueError(f"{self.label}: regression predictor needs covariates")
        d = len(x)
        mask = self.mask if self.mask is not None else (1,) * d
        need = sum(mask) + 2
        if len(self._y) < need:
            raise ValueError(f"{self.label}: need a burn-in of {need} observations, have {len(self._y)}")
        data = DesignData(np.array(self._X), np.array(self._y))
        return fit_submodel(data, mask, self.g).predictive(x)
