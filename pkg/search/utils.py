"""Utility functions for the search application."""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import UsageError


def mean_sd(values):
    """Mean and sample standard deviation; the deviation is 0 for a single value."""
    values = np.asarray(values, dtype=float)
    if not values.size:
        raise UsageError('no values to aggregate')
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), sd


def standard_error(values):
    values = np.asarray(values, dtype=float)
    _, sd = mean_sd(values)
    return sd / np.sqrt(values.size)


def kendall_tau(predicted, actual):
    """Kendall rank correlation; 0.0 when either side is constant."""
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape:
        raise UsageError(f'cannot correlate {predicted.shape} with {actual.shape}')
    if predicted.size < 2:
        raise UsageError('kendall tau needs at least two points')
    tau = stats.kendalltau(predicted, actual).statistic
    return 0.0 if np.isnan(tau) else float(tau)


@dataclass(frozen=True)
class SignTestResult:
    wins: int
    losses: int
    ties: int
    p_value: float


def paired_sign_test(treatment, control):
    """One-sided sign test that ``treatment`` beats ``control`` on paired runs."""
    treatment = np.asarray(treatment, dtype=float)
    control = np.asarray(control, dtype=float)
    if treatment.shape != control.shape:
        raise UsageError('paired samples must have the same length')
    wins = int(np.sum(treatment > control))
    losses = int(np.sum(treatment < control))
    ties = int(treatment.size - wins - losses)
    if wins + losses == 0:
        return SignTestResult(wins, losses, ties, 1.0)
    p_value = stats.binomtest(wins, wins + losses, 0.5, alternative='greater').pvalue
    return SignTestResult(wins, losses, ties, float(p_value))


def child_rng(rng):
    """Independent generator that leaves the state of ``rng`` untouched."""
    return rng.spawn(1)[0]


def seed_list(count, offset=0):
    return [offset + k for k in range(count)]
