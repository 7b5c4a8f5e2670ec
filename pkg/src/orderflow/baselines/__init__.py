"""Calibrated stochastic order-flow generators."""

from .common import GeneratedOrders
from .gmm import GaussianMixture, fit_gmm
from .hawkes import (
    DimMarks, HawkesParams, HawkesState, fit_hawkes, fit_hawkes_times, hawkes_intensity, load_hawkes,
    log_likelihood, save_hawkes, simulate_hawkes, simulate_hawkes_times,
)
from .zi import ZiParams, fit_zi, load_zi, sample_zi, sample_zi_orders, save_zi
