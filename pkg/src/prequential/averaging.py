"""Composite predictors: Bayesian model averaging, posterior-weighted median,
stacking and bagging, plus crowd pooling and the KL-optimality diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .conjugate import ConjugateModel
from .core import Predictor, PredictiveDistribution, mixture
from .linear import DesignData, fit_submodel, log_marginal_submodel
from .selection import FoldPlan

MAX_ITER = 100_000


# ---------------------------------------------------------------------------
# ensembles and BMA


@dataclass(frozen=True)
class LinearMember:
    """A g-prior linear submodel as an ensemble member; data is a DesignData."""

    mask: tuple
    g: Optional[float] = None

    def log_marginal(self, data: DesignData) -> float:
        return log_marginal_submodel(data, self.mask, self.g)

    def predictive(self, data: DesignData, x) -> PredictiveDistribution:
        return fit_submodel(data, self.mask, self.g).predictive(x)


def _log_evidence(member, data) -> tuple[float, bool]:
    """(log marginal likelihood, approximate?) for one member."""
    if isinstance(member, ConjugateModel):
        return member.log_marginal(list(data)), False
    if hasattr(member, "log_marginal"):
        return member.log_marginal(data), False
    if hasattr(member, "bic"):
        return -0.5 * member.bic(data), True
    raise TypeError(f"member {member!r} exposes neither log_marginal nor bic")


def _member_predictive(member, data, x) -> PredictiveDistribution:
    if isinstance(member, ConjugateModel):
        return member.update_many(list(data)).predictive()
    return member.predictive(data, x)


@dataclass
class ModelEnsemble:
    members: list  # (label, member) pairs
    prior_weights: Optional[np.ndarray] = None
    posterior_weights: Optional[np.ndarray] = None
    approximate: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.members) < 1:
            raise ValueError("an ensemble needs at least one member")
        K = len(self.members)
        if self.prior_weights is None:
            self.prior_weights = np.full(K, 1.0 / K)
        w = np.asarray(self.prior_weights, dtype=float)
        if w.size != K or np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError("prior weights must be a probability vector over members")
        self.prior_weights = w

    @property
    def labels(self) -> list[str]:
        return [lab for lab, _ in self.members]


def bma_weights(ensemble: ModelEnsemble, data) -> np.ndarray:
    """Posterior model probabilities, normalized in log-sum-exp arithmetic.

    Members without an exact marginal likelihood fall back to -BIC/2 and are
    flagged in ``ensemble.approximate``.
    """
    logml = np.empty(len(ensemble.members))
    flags = []
    for k, (_, m) in enumerate(ensemble.members):
        logml[k], approx = _log_evidence(m, data)
        flags.append(approx)
    with np.errstate(divide="ignore"):
        logw = logml + np.log(ensemble.prior_weights)
    if not np.any(np.isfinite(logw)):
        raise ValueError("all member marginal likelihoods are zero")
    w = np.exp(logw - special.logsumexp(logw))
    w = w / w.sum()
    ensemble.posterior_weights = w
    ensemble.approximate = flags
    return w


def bma_predictive(ensemble: ModelEnsemble, data, x=None) -> PredictiveDistribution:
    w = bma_weights(ensemble, data)
    comps = [_member_predictive(m, data, x) for _, m in ensemble.members]
    keep = [k for k in range(len(comps)) if w[k] > 0]
    return mixture([comps[k] for k in keep], w[keep] / w[keep].sum())


def bma_point(ensemble: ModelEnsemble, data, x=None) -> float:
    """Posterior-weighted average of member predictive means."""
    w = bma_weights(ensemble, data)
    means = np.array([_member_predictive(m, data, x).mean() for _, m in ensemble.members])
    live = w > 0
    if not np.all(np.isfinite(means[live])):
        raise ValueError("a member predictive has an infinite mean")
    return float(np.dot(w[live], means[live]))


def pwm_point(predictions: Sequence[float], weights: Sequence[float]) -> float:
    """Posterior-weighted median: the smallest sorted prediction whose cumulative weight reaches 1/2."""
    f = np.asarray(predictions, dtype=float)
    w = np.asarray(weights, dtype=float)
    if f.size == 0 or f.size != w.size:
        raise ValueError("need one weight per prediction")
    if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector")
    order = np.argsort(f, kind="stable")
    cum = np.cumsum(w[order])
    r = int(np.searchsorted(cum, 0.5 - 1e-12, side="left"))
    return float(f[order][min(r, f.size - 1)])


def pool_crowd(values: Sequence[float], combiner: str = "mean") -> float:
    """Uniformly weighted pool of point predictions."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("nothing to pool")
    if combiner == "mean":
        return math.fsum(v) / v.size
    if combiner == "median":
        return float(np.median(v))
    raise ValueError(f"unknown combiner {combiner!r}")


# ---------------------------------------------------------------------------
# stacking


class LinearLearner:
    """Linear regression on selected columns, fit by g-prior posterior mean or OLS."""

    def __init__(self, columns: Sequence[int], estimator: str = "posterior_mean", g: Optional[float] = None):
        if estimator not in ("posterior_mean", "mle"):
            raise ValueError(f"unknown estimator {estimator!r}")
        self.columns = list(columns)
        self.estimator = estimator
        self.g = g

    def fit(self, X, y) -> Callable:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        cols = self.columns
        if self.estimator == "posterior_mean":
            mask = tuple(int(j in cols) for j in range(X.shape[1]))
            post = fit_submodel(DesignData(X, y), mask, self.g)
            return post.predict
        Z = np.column_stack([np.ones(len(y)), X[:, cols]])
        coef, *_ = np.linalg.lstsq(Z, y, rcond=None)

        def predict(x):
            x = np.asarray(x, dtype=float)
            xs = np.atleast_2d(x)
            out = coef[0] + xs[:, cols] @ coef[1:]
            return out if x.ndim == 2 else float(out[0])

        return predict


class ConstantLearner:
    def __init__(self, value: Optional[float] = None):
        self.value = value

    def fit(self, X, y) -> Callable:
        c = float(np.mean(y)) if self.value is None else self.value

        def predict(x):
            x = np.asarray(x, dtype=float)
            return np.full(x.shape[0], c) if x.ndim == 2 else c

        return predict


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _project(v, constraint):
    return project_simplex(v) if constraint == "simplex" else np.maximum(v, 0.0)


def _solve_constrained_ls(F, y, constraint):
    K = F.shape[1]
    FtF = F.T @ F
    Fty = F.T @ y
    L = 2.0 * float(np.linalg.eigvalsh(FtF)[-1])
    if L <= 0:
        return np.full(K, 1.0 / K) if constraint == "simplex" else np.zeros(K), 0
    step = 1.0 / L
    a = np.full(K, 1.0 / K)
    z = a.copy()
    t = 1.0
    for it in range(1, MAX_ITER + 1):
        grad = 2.0 * (FtF @ z - Fty)
        a_new = _project(z - step * grad, constraint)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = a_new + ((t - 1.0) / t_new) * (a_new - a)
        if np.max(np.abs(a_new - a)) < 1e-13:
            a = a_new
            break
        a, t = a_new, t_new
    return a, it


def _min_norm_on_face(F, target, constraint, iters=20_000):
    """Min-norm alpha with F alpha = target inside the constraint set (Dykstra)."""
    Fp = np.linalg.pinv(F)
    x = np.zeros(F.shape[1])
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(iters):
        yv = x + p
        y_aff = yv - Fp @ (F @ yv - target)
        p = yv - y_aff
        xv = y_aff + q
        x_new = _project(xv, constraint)
        q = xv - x_new
        if np.max(np.abs(x_new - x)) < 1e-14:
            x = x_new
            break
        x = x_new
    return x


@dataclass
class StackingSolution:
    alphas: np.ndarray
    constraint: str
    objective: float
    degenerate: bool
    cv_predictions: np.ndarray = field(repr=False)
    fitted: list = field(default_factory=list, repr=False)
    iterations: int = 0


def _folds(folds, n):
    if folds is None:
        folds = FoldPlan("loo")
    if isinstance(folds, int):
        folds = FoldPlan("kfold", K=folds)
    return folds.folds(n)


def cross_predictions(members: Sequence, X, y, folds=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    F = np.empty((n, len(members)))
    for fold in _folds(folds, n):
        train = np.setdiff1d(np.arange(n), fold)
        for k, m in enumerate(members):
            f = m.fit(X[train], y[train])
            F[fold, k] = f(X[fold])
    return F


def stacking_objective(F: np.ndarray, y: np.ndarray, alphas: np.ndarray) -> float:
    r = np.asarray(y, dtype=float) - F @ alphas
    return float(r @ r)


def stacking_fit(members: Sequence, X, y, folds=None, constraint: str = "simplex") -> StackingSolution:
    """Cross-validated stacking weights over member point predictions.

    ``constraint`` is ``simplex`` (nonnegative, sum to one) or ``positive``
    (nonnegative only).  A rank-deficient cross-prediction matrix is flagged
    and resolved to the minimum-norm optimal weights.
    """
    if constraint not in ("simplex", "positive"):
        raise ValueError(f"unknown constraint {constraint!r}")
    y = np.asarray(y, dtype=float)
    F = cross_predictions(members, X, y, folds)
    K = F.shape[1]
    degenerate = bool(np.linalg.matrix_rank(F) < K)
    alphas, iters = _solve_constrained_ls(F, y, constraint)
    if degenerate and K > 1:
        alphas = _min_norm_on_face(F, F @ alphas, constraint)
    fitted = [m.fit(X, y) for m in members]
    return StackingSolution(
        alphas=alphas,
        constraint=constraint,
        objective=stacking_objective(F, y, alphas),
        degenerate=degenerate,
        cv_predictions=F,
        fitted=fitted,
        iterations=iters,
    )


def stacking_predict(solution: StackingSolution, x, members: Optional[Sequence[Callable]] = None):
    """Weighted sum of full-data member predictions at ``x``."""
    fns = solution.fitted if members is None else members
    preds = [f(x) for f in fns]
    return sum(a * p for a, p in zip(solution.alphas, preds))


# ---------------------------------------------------------------------------
# bagging


def resample_rng(seed: int, b: int, attempt: int = 0) -> np.random.Generator:
    """Generator for bootstrap replicate ``b``, independent of execution order."""
    return np.random.default_rng([seed, b, attempt])


def _bootstrap_indices(n, seed, b, attempt):
    return resample_rng(seed, b, attempt).integers(0, n, size=n)


def bag_point_predictor(builder, X, y, B: int, seed: int, x) -> float:
    """Average of predictions at ``x`` from ``builder`` refit on B bootstrap resamples.

    A resample on which the builder fails is redrawn; at most 3B fits are attempted.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    preds = []
    attempts = 0
    for b in range(B):
        attempt = 0
        while True:
            attempts += 1
            if attempts > 3 * B:
                raise RuntimeError(f"bagging gave up after {3 * B} attempts")
            idx = _bootstrap_indices(n, seed, b, attempt)
            try:
                f = builder.fit(X[idx], y[idx])
                preds.append(float(f(x)))
                break
            except (ValueError, np.linalg.LinAlgError):
                attempt += 1
    return math.fsum(preds) / B


def bag_posterior_weights(ensemble: ModelEnsemble, data, B: int, seed: int) -> np.ndarray:
    """Average of BMA weights over B bootstrap resamples of ``data``."""
    if B < 1:
        raise ValueError("B must be >= 1")
    is_design = isinstance(data, DesignData)
    n = data.n if is_design else len(data)
    acc = np.zeros(len(ensemble.members))
    attempts = 0
    for b in range(B):
        attempt = 0
        while True:
            attempts += 1
            if attempts > 3 * B:
                raise RuntimeError(f"bagging gave up after {3 * B} attempts")
            idx = _bootstrap_indices(n, seed, b, attempt)
            sample = DesignData(data.X[idx], data.y[idx]) if is_design else [data[i] for i in idx]
            try:
                acc += bma_weights(ensemble, sample)
                break
            except (ValueError, np.linalg.LinAlgError):
                attempt += 1
    w = acc / B
    ensemble.posterior_weights = None
    return w / w.sum()


# ---------------------------------------------------------------------------
# KL optimality of the posterior predictive mixture


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def posterior_mixture(posterior: Sequence[float], pmfs: np.ndarray) -> np.ndarray:
    """m(y | data) = sum_theta w(theta | data) p_theta(y) on a finite grid."""
    return np.asarray(posterior, dtype=float) @ np.asarray(pmfs, dtype=float)


def posterior_expected_kl(posterior: Sequence[float], pmfs: np.ndarray, q: Sequence[float]) -> float:
    """sum_theta w(theta | data) KL(p_theta || q)."""
    w = np.asarray(posterior, dtype=float)
    P = np.asarray(pmfs, dtype=float)
    q = np.asarray(q, dtype=float)
    terms = [_kl(P[k], q) for k in range(len(w)) if w[k] > 0]
    if any(math.isinf(t) for t in terms):
        return math.inf
    return math.fsum(wk * t for wk, t in zip(w[w > 0], terms))


def conditional_mutual_information(posterior: Sequence[float], pmfs: np.ndarray) -> float:
    """I(Theta; Y_next | data) = sum_theta w(theta | data) KL(p_theta || m)."""
    return posterior_expected_kl(posterior, pmfs, posterior_mixture(posterior, pmfs))


def mixture_kl_gap(posterior: Sequence[float], pmfs: np.ndarray, q: Sequence[float]) -> float:
    """Expected KL of q minus the mutual information; equals KL(m || q)."""
    total = posterior_expected_kl(posterior, pmfs, q)
    if math.isinf(total):
        return math.inf
    return total - conditional_mutual_information(posterior, pmfs)


class BMAPredictor(Predictor):
    """Sequential BMA over conjugate members.

    Log evidences accumulate one-step log predictive densities, which by the
    chain rule equal the log marginal likelihoods of the data so far.
    """

    def __init__(self, members: Sequence, prior_weights: Optional[Sequence[float]] = None, label: str = "bma"):
        self.ensemble = ModelEnsemble(list(members), prior_weights)
        self.label = label
        self.reset()

    def reset(self):
        self.models = [m for _, m in self.ensemble.members]
        self.log_evidence = np.zeros(len(self.models))

    @property
    def weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            logw = self.log_evidence + np.log(self.ensemble.prior_weights)
        w = np.exp(logw - special.logsumexp(logw))
        return w / w.sum()

    def observe(self, x, y):
        for k, m in enumerate(self.models):
            pred = m.predictive()
            ld = getattr(pred, "logdensity", None)
            if ld is not None:
                self.log_evidence[k] += ld(y)
            else:
                d = pred.density(y)
                self.log_evidence[k] += math.log(d) if d > 0 else -math.inf
            self.models[k] = m.update(y)

    def predictive(self, x=None):
        w = self.weights
        keep = np.nonzero(w > 0)[0]
        return mixture([self.models[k].predictive() for k in keep], w[keep] / w[keep].sum())

    def refit(self, history):
        self.reset()
        for x, y in history:
            self.observe(x, y)
