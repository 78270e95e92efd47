"""Dependent-data predictors: ARMA conditional likelihood, conjugate Bayesian
AR(p) and the linear-Gaussian Kalman filter.

State-space convention::

    X_{n+1} = F X_n + G eta_n,   eta_n ~ N(0, Q)
    Y_n     = H X_n + eps_n,     eps_n ~ N(0, R)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .conjugate import NormalInvGamma
from .core import Normal, Predictor, StudentT

LOG_2PI = math.log(2.0 * math.pi)
PSD_FLOOR = -1e-10


@dataclass(frozen=True)
class ArmaParams:
    phi: tuple = ()
    theta: tuple = ()
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))

    @property
    def p(self) -> int:
        return len(self.phi)

    @property
    def q(self) -> int:
        return len(self.theta)


def arma_residuals(params: ArmaParams, ys: Sequence[float]) -> np.ndarray:
    """Innovations e_t for t = p+1..n, with pre-sample innovations set to zero."""
    y = np.asarray(ys, dtype=float)
    p, q = params.p, params.q
    n = y.size
    eps = np.zeros(n)
    for t in range(p, n):
        e = y[t]
        for j in range(1, p + 1):
            e -= params.phi[j - 1] * y[t - j]
        for j in range(1, q + 1):
            if t - j >= p:
                e -= params.theta[j - 1] * eps[t - j]
        eps[t] = e
    return eps[p:]


def arma_conditional_loglik(params: ArmaParams, ys: Sequence[float]) -> float:
    """Gaussian log-likelihood of y_{p+1..n} given y_1..y_p and zero pre-sample innovations."""
    n = len(ys)
    if n <= max(params.p, params.q):
        raise ValueError(f"series of length {n} is too short for ARMA({params.p},{params.q})")
    e = arma_residuals(params, ys)
    s2 = params.sigma**2
    m = e.size
    return float(-0.5 * m * (LOG_2PI + math.log(s2)) - math.fsum(e * e) / (2.0 * s2))


# ---------------------------------------------------------------------------
# conjugate Bayesian AR(p)


@dataclass(frozen=True)
class RegressionNIG:
    """Multivariate Normal-Inverse-Gamma prior for y = z'beta + e.

    beta | s2 ~ N(mean, s2 * inv(precision)), s2 ~ InvGamma(shape, rate).
    """

    mean: np.ndarray
    precision: np.ndarray
    shape: float
    rate: float

    @classmethod
    def from_scalar(cls, prior: NormalInvGamma, p: int, coef_precision: Optional[float] = None):
        """Intercept prior from ``prior``; AR coefficients centered at 0 with the same precision."""
        cp = prior.kappa if coef_precision is None else coef_precision
        mean = np.zeros(p + 1)
        mean[0] = prior.m
        prec = np.diag([prior.kappa] + [cp] * p)
        return cls(mean, prec, prior.shape, prior.rate)

    def update(self, Z: np.ndarray, y: np.ndarray) -> "RegressionNIG":
        P1 = self.precision + Z.T @ Z
        m1 = np.linalg.solve(P1, self.precision @ self.mean + Z.T @ y)
        a1 = self.shape + y.size / 2.0
        r = y - Z @ m1
        dm = m1 - self.mean
        b1 = self.rate + 0.5 * (float(r @ r) + float(dm @ self.precision @ dm))
        return RegressionNIG(m1, P1, a1, b1)

    def predictive(self, z: np.ndarray) -> StudentT:
        v = float(z @ np.linalg.solve(self.precision, z))
        scale = math.sqrt(self.rate / self.shape * (1.0 + v))
        return StudentT(2.0 * self.shape, float(z @ self.mean), scale)


class ARBayesPredictor(Predictor):
    """AR(p) with intercept as conjugate regression of y_t on (1, y_{t-1}, ..., y_{t-p}).

    The first p values are conditioned on, not modeled.  The predictive is
    Student-t and needs at least p + 2 observations.
    """

    def __init__(self, p: int, prior, coef_precision: Optional[float] = None, label: str = "ar-bayes"):
        if p < 0:
            raise ValueError("AR order must be >= 0")
        self.p = p
        if isinstance(prior, NormalInvGamma):
            prior = RegressionNIG.from_scalar(prior, p, coef_precision)
        if prior.mean.size != p + 1:
            raise ValueError(f"prior must cover {p + 1} coefficients (intercept + AR terms)")
        self.prior = prior
        self.label = label
        self.reset()

    def reset(self):
        self._ys: list[float] = []

    def observe(self, x, y):
        self._ys.append(float(y))

    def design(self) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(self._ys)
        p = self.p
        rows = [np.concatenate(([1.0], y[t - p:t][::-1])) for t in range(p, y.size)]
        Z = np.array(rows).reshape(-1, p + 1)
        return Z, y[p:]

    def posterior(self) -> RegressionNIG:
        Z, y = self.design()
        return self.prior.update(Z, y) if y.size else self.prior

    def predictive(self, x=None):
        if len(self._ys) < self.p + 2:
            raise ValueError(
                f"{self.label}: AR({self.p}) needs at least {self.p + 2} observations, have {len(self._ys)}"
            )
        y = np.asarray(self._ys)
        z = np.concatenate(([1.0], y[y.size - self.p:][::-1])) if self.p else np.ones(1)
        return self.posterior().predictive(z)


def ar_bayes_predictor(p: int, prior, **kw) -> ARBayesPredictor:
    return ARBayesPredictor(p, prior, **kw)


# ---------------------------------------------------------------------------
# Kalman filter


def _psd_check(M: np.ndarray, name: str, strict: bool = False):
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    ev = np.linalg.eigvalsh(M)
    if ev.min() < PSD_FLOOR or (strict and ev.min() <= 0):
        raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")


@dataclass(frozen=True)
class SsmParams:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        vals = {k: np.atleast_2d(np.asarray(getattr(self, k), dtype=float)) for k in ("F", "G", "H", "Q", "R", "P0")}
        vals["m0"] = np.atleast_1d(np.asarray(self.m0, dtype=float))
        for k, v in vals.items():
            object.__setattr__(self, k, v)
        d = self.F.shape[0]
        m = self.Q.shape[0]
        k = self.R.shape[0]
        if self.F.shape != (d, d) or self.G.shape != (d, m) or self.H.shape != (k, d):
            raise ValueError(
                f"dimension mismatch: F {self.F.shape}, G {self.G.shape}, H {self.H.shape}, Q {self.Q.shape}, R {self.R.shape}"
            )
        if self.m0.shape != (d,) or self.P0.shape != (d, d):
            raise ValueError("initial state mean/covariance have the wrong dimension")
        _psd_check(self.Q, "Q")
        _psd_check(self.R, "R", strict=True)
        _psd_check(self.P0, "P0")


@dataclass(frozen=True)
class FilterState:
    mean: np.ndarray
    cov: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, params: SsmParams) -> "FilterState":
        return cls(params.m0.copy(), params.P0.copy(), 0)


def _sym(M):
    return 0.5 * (M + M.T)


def kalman_predict(state: FilterState, params: SsmParams) -> FilterState:
    """X_{n+1} | y^n from X_n | y^n."""
    F, G = params.F, params.G
    if state.mean.shape != (F.shape[0],):
        raise ValueError("state dimension does not match F")
    mean = F @ state.mean
    cov = _sym(F @ state.cov @ F.T + G @ params.Q @ G.T)
    return FilterState(mean, cov, state.step + 1)


def kalman_update(state: FilterState, params: SsmParams, y) -> FilterState:
    """Condition a predicted state on the observation y (Joseph-form covariance)."""
    H, R = params.H, params.R
    y = np.atleast_1d(np.asarray(y, dtype=float))
    S = H @ state.cov @ H.T + R
    try:
        K = np.linalg.solve(S, H @ state.cov).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is singular") from exc
    mean = state.mean + K @ (y - H @ state.mean)
    A = np.eye(state.mean.size) - K @ H
    cov = _sym(A @ state.cov @ A.T + K @ R @ K.T)
    return FilterState(mean, cov, state.step)


def kalman_observation_predictive(state: FilterState, params: SsmParams):
    """Law of Y given the (predicted) state: N(H mean, H cov H' + R).

    Scalar observations return a :class:`Normal`; otherwise (mean, cov).
    """
    H = params.H
    mean = H @ state.mean
    cov = _sym(H @ state.cov @ H.T + params.R)
    if mean.size == 1:
        return Normal(float(mean[0]), math.sqrt(float(cov[0, 0])))
    return mean, cov


class KalmanPredictor(Predictor):
    """One-step observation predictor for a scalar-output state-space model.

    Before the first observation the predictive uses the initial state
    (taken as the state at the first observation time).
    """

    def __init__(self, params: SsmParams, label: str = "kalman"):
        if params.H.shape[0] != 1:
            raise ValueError("KalmanPredictor handles scalar observations only")
        self.params = params
        self.label = label
        self.reset()

    def reset(self):
        self.state = FilterState.initial(self.params)
        self._predicted = True

    def observe(self, x, y):
        if not self._predicted:
            self.state = kalman_predict(self.state, self.params)
        self.state = kalman_update(self.state, self.params, y)
        self._predicted = False

    def predictive(self, x=None):
        st = self.state if self._predicted else kalman_predict(self.state, self.params)
        return kalman_observation_predictive(st, self.params)


def local_level(q: float, r: float, m0: float = 0.0, p0: float = 1e6, phi: float = 1.0) -> SsmParams:
    """Scalar x_{n+1} = phi x_n + eta, y_n = x_n + eps."""
    return SsmParams(F=[[phi]], G=[[1.0]], H=[[1.0]], Q=[[q]], R=[[r]], m0=[m0], P0=[[p0]])
