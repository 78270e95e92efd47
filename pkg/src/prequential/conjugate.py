"""Closed-form conjugate models: Beta-Bernoulli, Normal with known variance, Normal-Inverse-Gamma.

Every model is an immutable value holding its prior hyperparameters plus
exact sufficient statistics, so an update over any permutation of a batch
gives bit-identical hyperparameters.  ``posterior_update`` returns a new
value; ``params`` reports the current (posterior) hyperparameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import special

from .core import Discrete, Normal, Predictor, PredictiveDistribution, StudentT

LOG_2PI = math.log(2.0 * math.pi)


class SupportError(ValueError):
    """Outcome outside the support of the model family."""


class ImproperPosteriorError(ValueError):
    """The posterior (or marginal) is not a proper distribution."""


@dataclass(frozen=True)
class ExactSum:
    """Running float sum kept as non-overlapping partials (Shewchuk), so the
    rounded total does not depend on summation order."""

    partials: tuple = ()

    def add(self, x: float) -> "ExactSum":
        partials = []
        for y in self.partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials.append(lo)
            x = hi
        partials.append(x)
        return ExactSum(tuple(partials))

    @property
    def value(self) -> float:
        return math.fsum(self.partials)


class ConjugateModel:
    """Mixin with the operations shared by all families."""

    n_obs: int

    def update(self, y) -> "ConjugateModel":
        raise NotImplementedError

    def update_many(self, ys: Iterable) -> "ConjugateModel":
        m = self
        for y in ys:
            m = m.update(y)
        return m

    def log_marginal(self, ys: Sequence, weight: float = 1.0) -> float:
        """log of the integral of prior times likelihood**weight over the parameter."""
        raise NotImplementedError

    def predictive(self) -> PredictiveDistribution:
        raise NotImplementedError

    def as_prior(self) -> "ConjugateModel":
        """Fresh model whose prior is the current posterior."""
        raise NotImplementedError

    @property
    def proper(self) -> bool:
        return True

    @property
    def min_proper_size(self) -> int:
        """Smallest number of observations that makes the posterior proper."""
        return 0

    def condition(self, ys: Sequence) -> "ConjugateModel":
        return self.update_many(ys).as_prior()


@dataclass(frozen=True)
class BetaBinomial(ConjugateModel):
    """Bernoulli likelihood on {0, 1} with a Beta(a, b) prior."""

    a: float
    b: float
    n_obs: int = 0
    successes: int = 0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"Beta hyperparameters must be positive, got ({self.a}, {self.b})")

    @staticmethod
    def _check(y) -> int:
        if y not in (0, 1):
            raise SupportError(f"Bernoulli outcome must be 0 or 1, got {y!r}")
        return int(y)

    @property
    def params(self) -> tuple[float, float]:
        return (self.a + self.successes, self.b + self.n_obs - self.successes)

    def update(self, y):
        y = self._check(y)
        return replace(self, n_obs=self.n_obs + 1, successes=self.successes + y)

    def predictive(self):
        a, b = self.params
        p1 = a / (a + b)
        return Discrete([0, 1], [1.0 - p1, p1])

    def as_prior(self):
        a, b = self.params
        return BetaBinomial(a, b)

    def log_marginal(self, ys, weight=1.0):
        ys = [self._check(y) for y in ys]
        a, b = self.params
        s = sum(ys)
        f = weight
        return float(special.betaln(a + f * s, b + f * (len(ys) - s)) - special.betaln(a, b))

    def loglik(self, theta: float, ys) -> float:
        s = sum(ys)
        n = len(ys)
        with np.errstate(divide="ignore"):
            return float(special.xlogy(s, theta) + special.xlog1py(n - s, -theta))

    def mle(self, ys) -> float:
        return sum(ys) / len(ys)

    def sample_posterior(self, rng, size=None):
        a, b = self.params
        return rng.beta(a, b, size)

    def sample_data(self, theta, n, rng):
        return (rng.uniform(size=n) < theta).astype(int)


@dataclass(frozen=True)
class NormalKnownVar(ConjugateModel):
    """Normal likelihood with known variance ``sigmasq`` and a Normal(mu0, tau0sq) prior on the mean.

    ``tau0sq = inf`` gives the flat (improper) prior, proper after one observation.
    """

    mu0: float
    tau0sq: float
    sigmasq: float
    n_obs: int = 0
    sum_z: ExactSum = field(default_factory=ExactSum)  # sum of (y - mu0)

    def __post_init__(self):
        if not (self.tau0sq > 0 and self.sigmasq > 0):
            raise ValueError("tau0sq and sigmasq must be positive")

    @property
    def proper(self):
        return math.isfinite(self.tau0sq) or self.n_obs > 0

    @property
    def min_proper_size(self):
        return 0 if math.isfinite(self.tau0sq) else 1

    @property
    def params(self) -> tuple[float, float]:
        """Posterior (mean, variance) of the unknown mean."""
        n = self.n_obs
        sz = self.sum_z.value
        if math.isinf(self.tau0sq):
            if n == 0:
                raise ImproperPosteriorError("flat prior with no data has no proper posterior")
            return self.mu0 + sz / n, self.sigmasq / n
        prec = 1.0 / self.tau0sq + n / self.sigmasq
        return self.mu0 + (sz / self.sigmasq) / prec, 1.0 / prec

    def update(self, y):
        y = float(y)
        if not math.isfinite(y):
            raise SupportError(f"non-finite outcome {y}")
        return replace(self, n_obs=self.n_obs + 1, sum_z=self.sum_z.add(y - self.mu0))

    def predictive(self):
        m, v = self.params
        return Normal(m, math.sqrt(v + self.sigmasq))

    def as_prior(self):
        m, v = self.params
        return NormalKnownVar(m, v, self.sigmasq)

    def log_marginal(self, ys, weight=1.0):
        ys = [float(y) for y in ys]
        n = len(ys)
        if n == 0:
            raise ValueError("empty sequence")
        if not self.proper:
            raise ImproperPosteriorError("marginal likelihood under a flat prior is improper")
        m0, tau2 = self.params
        z = [y - m0 for y in ys]
        sz = math.fsum(z)
        szz = math.fsum(v * v for v in z)
        s2 = self.sigmasq
        f = weight
        v = s2 / (f * n)
        zbar = sz / n
        return (
            -0.5 * n * f * (LOG_2PI + math.log(s2))
            - f / (2 * s2) * (szz - sz * sz / n)
            + 0.5 * math.log(v / (tau2 + v))
            - zbar * zbar / (2 * (tau2 + v))
        )

    def loglik(self, theta: float, ys) -> float:
        ys = np.asarray(ys, dtype=float)
        return float(-0.5 * ys.size * (LOG_2PI + math.log(self.sigmasq)) - np.sum((ys - theta) ** 2) / (2 * self.sigmasq))

    def mle(self, ys) -> float:
        return math.fsum(ys) / len(ys)

    def sample_posterior(self, rng, size=None):
        m, v = self.params
        return rng.normal(m, math.sqrt(v), size)

    def sample_data(self, theta, n, rng):
        return rng.normal(theta, math.sqrt(self.sigmasq), n)


@dataclass(frozen=True)
class NormalInvGamma(ConjugateModel):
    """Normal likelihood, unknown mean and variance.

    Prior: sigma^2 ~ InvGamma(shape, rate) and mean | sigma^2 ~ Normal(m, sigma^2 / kappa).
    """

    m: float
    kappa: float
    shape: float
    rate: float
    n_obs: int = 0
    sum_z: ExactSum = field(default_factory=ExactSum)  # sum of (y - m)
    sum_zz: ExactSum = field(default_factory=ExactSum)  # sum of (y - m)^2

    def __post_init__(self):
        if not (self.kappa > 0 and self.shape > 0 and self.rate > 0):
            raise ValueError("kappa, shape and rate must be positive")

    @property
    def params(self) -> tuple[float, float, float, float]:
        n = self.n_obs
        sz = self.sum_z.value
        szz = self.sum_zz.value
        kn = self.kappa + n
        mn = self.m + sz / kn
        an = self.shape + n / 2
        bn = self.rate + 0.5 * (szz - sz * sz / kn)
        return mn, kn, an, bn

    def update(self, y):
        y = float(y)
        if not math.isfinite(y):
            raise SupportError(f"non-finite outcome {y}")
        z = y - self.m
        return replace(self, n_obs=self.n_obs + 1, sum_z=self.sum_z.add(z), sum_zz=self.sum_zz.add(z * z))

    def predictive(self):
        mn, kn, an, bn = self.params
        return StudentT(2 * an, mn, math.sqrt(bn * (1 + 1 / kn) / an))

    def as_prior(self):
        return NormalInvGamma(*self.params)

    def log_marginal(self, ys, weight=1.0):
        ys = [float(y) for y in ys]
        n = len(ys)
        if n == 0:
            raise ValueError("empty sequence")
        m0, k0, a0, b0 = self.params
        f = weight
        z = [y - m0 for y in ys]
        sz = math.fsum(z)
        szz = math.fsum(v * v for v in z)
        k1 = k0 + f * n
        a1 = a0 + f * n / 2
        b1 = b0 + 0.5 * (f * szz - f * f * sz * sz / k1)
        return (
            -0.5 * f * n * LOG_2PI
            + 0.5 * math.log(k0 / k1)
            + a0 * math.log(b0)
            - a1 * math.log(b1)
            + special.gammaln(a1)
            - special.gammaln(a0)
        )

    def loglik(self, theta, ys) -> float:
        mu, s2 = theta
        ys = np.asarray(ys, dtype=float)
        return float(-0.5 * ys.size * (LOG_2PI + math.log(s2)) - np.sum((ys - mu) ** 2) / (2 * s2))

    def mle(self, ys):
        ys = np.asarray(ys, dtype=float)
        return float(ys.mean()), float(ys.var())

    def sample_posterior(self, rng, size=None):
        mn, kn, an, bn = self.params
        if size is None:
            s2 = bn / rng.gamma(an)
            return float(rng.normal(mn, math.sqrt(s2 / kn))), float(s2)
        s2 = bn / rng.gamma(an, size=size)
        mu = rng.normal(mn, np.sqrt(s2 / kn))
        return list(zip(mu.tolist(), s2.tolist()))

    def sample_data(self, theta, n, rng):
        mu, s2 = theta
        return rng.normal(mu, math.sqrt(s2), n)


FAMILIES = {
    "beta_binomial": BetaBinomial,
    "normal_known_var": NormalKnownVar,
    "normal_inv_gamma": NormalInvGamma,
}


def posterior_update(model: ConjugateModel, y) -> ConjugateModel:
    return model.update(y)


def posterior_predictive(state: ConjugateModel) -> PredictiveDistribution:
    return state.predictive()


def log_marginal_likelihood(model: ConjugateModel, ys: Sequence) -> float:
    """Closed-form log prior-predictive probability (density) of ``ys``."""
    if len(ys) == 0:
        raise ValueError("log marginal likelihood needs at least one outcome")
    return model.log_marginal(ys)


class ConjugatePredictor(Predictor):
    """Bayes predictor: the posterior predictive of a conjugate model."""

    def __init__(self, model: ConjugateModel, label: str = "bayes"):
        self.prior = model
        self.model = model
        self.label = label

    def observe(self, x, y):
        self.model = self.model.update(y)

    def predictive(self, x=None):
        if not self.model.proper:
            raise ImproperPosteriorError(f"{self.label}: posterior is improper before any data")
        return self.model.predictive()

    def reset(self):
        self.model = self.prior


class PlugInPredictor(Predictor):
    """Family density at a point estimate; parameter uncertainty is not propagated.

    ``family`` is ``bernoulli``, ``normal`` or ``normal_known_var``.
    ``estimator`` is ``mle`` or ``posterior_mean``; the latter needs ``prior``
    (a conjugate model of the matching family).  MLE variance uses 1/n.
    """

    FAMILIES = ("bernoulli", "normal", "normal_known_var")

    def __init__(
        self,
        family: str,
        estimator: str = "mle",
        prior: Optional[ConjugateModel] = None,
        sigmasq: Optional[float] = None,
        label: str = "plug-in",
    ):
        if family not in self.FAMILIES:
            raise ValueError(f"unknown plug-in family {family!r}; expected one of {self.FAMILIES}")
        if estimator not in ("mle", "posterior_mean"):
            raise ValueError(f"unknown estimator {estimator!r}")
        if estimator == "posterior_mean" and prior is None:
            raise ValueError("posterior-mean plug-in needs a prior")
        if family == "normal_known_var":
            if sigmasq is None:
                sigmasq = getattr(prior, "sigmasq", None)
            if sigmasq is None:
                raise ValueError("normal_known_var plug-in needs sigmasq")
        self.family = family
        self.estimator = estimator
        self.prior = prior
        self.sigmasq = sigmasq
        self.label = label
        self.reset()

    @property
    def burn_in(self) -> int:
        if self.estimator == "posterior_mean":
            return 0
        return 2 if self.family == "normal" else 1

    def reset(self):
        self._ys: list[float] = []
        self._model = self.prior

    def observe(self, x, y):
        self._ys.append(y)
        if self._model is not None:
            self._model = self._model.update(y)

    def predictive(self, x=None):
        if len(self._ys) < self.burn_in:
            raise ValueError(
                f"{self.label}: MLE plug-in needs a burn-in of {self.burn_in} observation(s), "
                f"have {len(self._ys)}"
            )
        if self.family == "bernoulli":
            if self.estimator == "mle":
                p = sum(self._ys) / len(self._ys)
            else:
                a, b = self._model.params
                p = a / (a + b)
            return Discrete([0, 1], [1.0 - p, p])
        if self.family == "normal_known_var":
            if self.estimator == "mle":
                mu = math.fsum(self._ys) / len(self._ys)
            else:
                mu = self._model.params[0]
            return Normal(mu, math.sqrt(self.sigmasq))
        if self.estimator == "mle":
            ys = np.asarray(self._ys, dtype=float)
            mu, var = float(ys.mean()), float(ys.var())
        else:
            mn, kn, an, bn = self._model.params
            mu, var = mn, bn / (an - 1) if an > 1 else bn / an
        if not var > 0:
            raise ValueError(f"{self.label}: plug-in variance is zero; the data are constant so far")
        return Normal(mu, math.sqrt(var))


def plug_in_predictor(family: str, estimator: str = "mle", **kwargs) -> PlugInPredictor:
    return PlugInPredictor(family, estimator, **kwargs)
