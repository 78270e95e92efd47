"""Model worth and testing: Bayes factors (plain, intrinsic, fractional),
information criteria, ELPD under fold plans, posterior predictive p-values
and projection distances for linear submodels."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import special

from .conjugate import ConjugateModel, ImproperPosteriorError
from .linear import DesignData, LinearPosterior, log_marginal_submodel

MAX_TRAINING_SUBSETS = 500


def _log_ml(model, ys) -> float:
    if isinstance(model, ConjugateModel):
        if ys is None or len(ys) == 0:
            raise ValueError("conjugate Bayes factor needs a nonempty outcome sequence")
        return model.log_marginal(ys)
    if isinstance(model, tuple) and len(model) in (2, 3) and isinstance(model[0], DesignData):
        data, mask = model[0], model[1]
        g = model[2] if len(model) == 3 else None
        return log_marginal_submodel(data, mask, g)
    raise TypeError(f"cannot compute a marginal likelihood for {type(model).__name__}")


def log_bayes_factor(mA, mB, ys=None) -> float:
    la = _log_ml(mA, ys)
    lb = _log_ml(mB, ys)
    if not (math.isfinite(la) and math.isfinite(lb)):
        raise ValueError(f"non-finite marginal likelihood ({la}, {lb})")
    return la - lb


def bayes_factor(mA, mB, ys=None) -> float:
    """p(D | A) / p(D | B).

    Models are conjugate models (with ``ys``) or ``(DesignData, mask[, g])``
    tuples for g-prior linear submodels.
    """
    return math.exp(log_bayes_factor(mA, mB, ys))


def _combine(values: np.ndarray, combiner: str) -> float:
    if combiner == "arithmetic":
        return float(np.mean(values))
    if combiner == "geometric":
        return float(np.exp(np.mean(np.log(values))))
    if combiner == "median":
        return float(np.median(values))
    raise ValueError(f"unknown combiner {combiner!r}")


@dataclass(frozen=True)
class IntrinsicBF:
    value: float
    subsets: list
    per_subset: np.ndarray = field(repr=False)
    exhaustive: bool = True

    def __float__(self):
        return self.value


def _training_subsets(n: int, m: int, cap: int, seed: int):
    total = math.comb(n, m)
    if total <= cap:
        return [tuple(c) for c in itertools.combinations(range(n), m)], True
    rng = np.random.default_rng(seed)
    seen: dict = {}
    while len(seen) < cap:
        c = tuple(sorted(rng.choice(n, size=m, replace=False).tolist()))
        seen.setdefault(c, None)
    return list(seen), False


def intrinsic_bf(
    mA: ConjugateModel,
    mB: ConjugateModel,
    ys: Sequence,
    min_train_size: int,
    combiner: str = "arithmetic",
    seed: int = 0,
    max_subsets: int = MAX_TRAINING_SUBSETS,
) -> IntrinsicBF:
    """Ratio of held-out marginals conditioned on a minimal training set, averaged over training sets."""
    n = len(ys)
    need = max(mA.min_proper_size, mB.min_proper_size)
    if min_train_size < need:
        raise ImproperPosteriorError(
            f"training sets of size {min_train_size} leave a posterior improper (need >= {need})"
        )
    if min_train_size >= n:
        raise ValueError("training set must leave at least one held-out outcome")
    subsets, exhaustive = _training_subsets(n, min_train_size, max_subsets, seed)
    vals = np.empty(len(subsets))
    for s, train_idx in enumerate(subsets):
        tr = set(train_idx)
        train = [ys[i] for i in train_idx]
        test = [ys[i] for i in range(n) if i not in tr]
        la = mA.condition(train).log_marginal(test)
        lb = mB.condition(train).log_marginal(test)
        vals[s] = math.exp(la - lb)
    return IntrinsicBF(_combine(vals, combiner), subsets, vals, exhaustive)


def fractional_bf(mA: ConjugateModel, mB: ConjugateModel, ys: Sequence, f: float) -> float:
    """q(D|A, f) / q(D|B, f) with q = marginal(full likelihood) / marginal(likelihood**f)."""
    if not 0.0 < f <= 1.0:
        raise ValueError(f"fraction f must lie in (0, 1], got {f}")
    qa = mA.log_marginal(ys) - mA.log_marginal(ys, weight=f)
    qb = mB.log_marginal(ys) - mB.log_marginal(ys, weight=f)
    if not (math.isfinite(qa) and math.isfinite(qb)):
        raise ValueError("fractional likelihood is not integrable")
    return math.exp(qa - qb)


def information_criterion(
    loglik: float, k_params: int, n: int, alpha: Union[str, Callable[[int], float]] = "bic"
) -> float:
    """-2 loglik + alpha(n) k, with alpha = log n (bic), 2 (aic) or a callable."""
    if n < 1 or k_params < 0:
        raise ValueError("need n >= 1 and k >= 0")
    if alpha == "bic":
        a = math.log(n)
    elif alpha == "aic":
        a = 2.0
    elif callable(alpha):
        a = float(alpha(n))
    else:
        raise ValueError(f"unknown criterion {alpha!r}")
    return -2.0 * loglik + a * k_params


def ic_weights(ics: Sequence[float]) -> np.ndarray:
    """Simplex weights proportional to exp(-IC / 2)."""
    z = -0.5 * np.asarray(ics, dtype=float)
    return np.exp(z - special.logsumexp(z))


@dataclass(frozen=True)
class FoldPlan:
    """``in_sample``, ``loo`` or ``kfold`` (with ``K`` and ``seed``)."""

    kind: str = "loo"
    K: int = 5
    seed: int = 0

    def folds(self, n: int) -> list[np.ndarray]:
        if self.kind == "in_sample":
            return [np.arange(n)]
        if self.kind == "loo":
            return [np.array([i]) for i in range(n)]
        if self.kind == "kfold":
            if not 2 <= self.K <= n:
                raise ValueError(f"kfold needs 2 <= K <= n, got K={self.K}, n={n}")
            perm = np.random.default_rng(self.seed).permutation(n)
            return [np.sort(f) for f in np.array_split(perm, self.K)]
        raise ValueError(f"unknown fold plan {self.kind!r}")


def elpd(model: ConjugateModel, ys: Sequence, plan: FoldPlan = FoldPlan(), worth: str = "log") -> float:
    """Average worth of the posterior predictive at each outcome.

    For ``loo``/``kfold`` the predictive for y_i is conditioned on the data
    outside the fold containing i; ``in_sample`` conditions on all data.
    ``worth='log'`` averages log predictive densities; ``'squared'`` averages
    squared errors of the predictive mean.
    """
    if worth not in ("log", "squared"):
        raise ValueError(f"unknown worth {worth!r}")
    ys = list(ys)
    n = len(ys)
    if n == 0:
        raise ValueError("empty data")
    vals = np.empty(n)
    for fold in plan.folds(n):
        held = set(fold.tolist())
        train = ys if plan.kind == "in_sample" else [ys[i] for i in range(n) if i not in held]
        if plan.kind != "in_sample" and not train:
            raise ValueError("fold leaves an empty training set; leave-one-out needs n >= 2")
        if len(train) < model.min_proper_size:
            raise ImproperPosteriorError("fold leaves the posterior improper")
        pred = model.update_many(train).predictive()
        for i in fold:
            y = ys[i]
            if worth == "log":
                ld = getattr(pred, "logdensity", None)
                vals[i] = ld(y) if ld is not None else math.log(pred.density(y))
            else:
                vals[i] = (y - pred.mean()) ** 2
    return float(np.mean(vals))


def ppc_pvalue(
    model: ConjugateModel,
    ys: Sequence,
    statistic: Callable,
    S: int = 1000,
    seed: int = 0,
) -> float:
    """Posterior predictive p-value, ties counted as 1/2.

    ``statistic(y, theta)`` is evaluated on the observed data and on a
    replicate drawn from p(y | theta_s) for each posterior draw theta_s.
    """
    if S < 100:
        raise ValueError("ppc needs at least 100 draws")
    rng = np.random.default_rng(seed)
    ys = np.asarray(ys)
    post = model.update_many(ys.tolist())
    acc = 0.0
    for _ in range(S):
        theta = post.sample_posterior(rng)
        rep = model.sample_data(theta, ys.size, rng)
        t_rep = statistic(rep, theta)
        t_obs = statistic(ys, theta)
        if not (math.isfinite(t_rep) and math.isfinite(t_obs)):
            raise ValueError("test statistic is not finite on a draw")
        if t_rep > t_obs:
            acc += 1.0
        elif t_rep == t_obs:
            acc += 0.5
    return acc / S


def _gauss_kl(m1, v1, m2, v2):
    return 0.5 * np.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / (2.0 * v2) - 0.5


def projection_distance(
    reference: LinearPosterior,
    target_mask: Sequence[int],
    data: DesignData,
    S: int = 1000,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Project a reference g-prior posterior onto a submodel.

    Returns ``(theta_opt, distance)`` where ``theta_opt`` is (intercept,
    slopes on the target columns) from least-squares projection of the
    reference fitted values, and ``distance`` is the Monte-Carlo average of
    the per-point Gaussian KL between each reference draw and its projection.
    """
    target = tuple(int(b) for b in target_mask)
    if len(target) != len(reference.mask):
        raise ValueError("target mask length differs from the reference mask")
    if any(t and not r for t, r in zip(target, reference.mask)):
        raise ValueError("target mask must be a subset of the reference mask")
    n = data.n
    ref_cols = reference.columns
    Xr = data.X[:, ref_cols] - reference.col_means
    tcols = [k for k, j in enumerate(ref_cols) if target[j]]
    Z = np.column_stack([np.ones(n), Xr[:, tcols]])
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise ValueError("target design is rank deficient")

    fitted = reference.intercept + Xr @ reference.coef_mean
    theta_opt, *_ = np.linalg.lstsq(Z, fitted, rcond=None)

    rng = np.random.default_rng(seed)
    b0, beta, s2 = reference.sample(rng, S)
    mu = b0[:, None] + beta @ Xr.T  # S x n
    coef, *_ = np.linalg.lstsq(Z, mu.T, rcond=None)
    mu_perp = (Z @ coef).T
    s2_perp = s2 + np.mean((mu - mu_perp) ** 2, axis=1)
    kl = _gauss_kl(mu, s2[:, None], mu_perp, s2_perp[:, None])
    dist = float(kl.sum() / (n * S))
    return theta_opt, max(dist, 0.0)
