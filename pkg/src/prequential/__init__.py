"""Prequential prediction: predictive distributions, conjugate and linear
Bayes predictors, scoring, model selection and averaging, streaming
predictors, time-series filters and a benchmark runner."""

from .core import (
    Discrete,
    Loss,
    Mixture,
    Normal,
    ObservationStream,
    PredictionInterval,
    PredictiveDistribution,
    Predictor,
    Record,
    StudentT,
    Uniform,
    pit,
    point_mass,
    point_prediction,
    predictive_interval,
)
from .conjugate import BetaBinomial, ConjugatePredictor, NormalInvGamma, NormalKnownVar, PlugInPredictor
from .linear import DesignData, GPriorPredictor, fit_submodel, log_marginal_submodel, median_probability_model
from .scoring import compare_forecasters, cpe, cumulative_log_score, log_score, pit_uniformity
from .streaming import CountMinSketch, EDFPredictor, ExpertSet, ShtarkovPredictor, shtarkov_joint
from .timeseries import ARBayesPredictor, KalmanPredictor, SsmParams

__version__ = "0.1.0"
