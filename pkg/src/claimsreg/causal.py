"""Bayesian inverse-probability weighting for a binary treatment.

Every propensity draw ``pi^(s)`` yields IPW weights, weighted event counts per
treatment arm and a pair of conjugate beta posteriors for the arm-level event
probabilities. One draw of ``p0`` and ``p1`` per propensity draw gives the
posterior of the risk difference ``delta = p1 - p0``, integrating over the
propensity model's uncertainty.

The weighted counts are rescaled so each arm keeps its observed size,
``gamma_g = n_g / (E_g + F_g)``, hence ``a*_g + b*_g = 2 + n_g``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .ingest import AnalysisDataset
from .model import PROPENSITY_EPS

BALANCE_LIMIT = 10.0
POSITIVITY_BOUNDS = (0.01, 0.99)


def ipw_weights(pi, X) -> np.ndarray:
    """``w = X/pi + (1 - X)/(1 - pi)``, after clamping pi to [eps, 1 - eps].

    `pi` may be a vector (n,) or a matrix of draws (S, n).
    """
    pi = np.asarray(pi, dtype=float)
    X = np.asarray(X, dtype=float)
    if pi.shape[-1] != X.shape[-1]:
        raise ValidationError("propensity and treatment lengths differ")
    if not np.all(np.isfinite(pi)) or np.any((pi < 0) | (pi > 1)):
        raise ValidationError("propensity scores must lie in (0, 1)")
    pi = np.clip(pi, PROPENSITY_EPS, 1.0 - PROPENSITY_EPS)
    return X / pi + (1.0 - X) / (1.0 - pi)


def _binary(v, what):
    v = np.asarray(v)
    if v.ndim != 1 or not np.all((v == 0) | (v == 1)):
        raise ValidationError(f"{what} must be a binary vector")
    return v.astype(float)


def _arms(X):
    n1 = int(X.sum())
    n0 = X.size - n1
    if n0 == 0 or n1 == 0:
        raise ValidationError("both treatment groups must be non-empty (positivity)")
    return np.array([n0, n1], dtype=float)


@dataclass(frozen=True)
class WeightedCounts:
    """Beta posterior parameters per arm; the last axis is (control, treated).

    Leading axes, if any, index propensity draws.
    """

    a_star: np.ndarray
    b_star: np.ndarray
    gamma: np.ndarray
    n_group: np.ndarray


def weighted_beta_params(pi, X, Y) -> WeightedCounts:
    X = _binary(X, "treatment")
    Y = _binary(Y, "outcome")
    if X.size != Y.size:
        raise ValidationError("treatment and outcome lengths differ")
    n_group = _arms(X)
    w = ipw_weights(pi, X)
    wx = w * X
    wc = w - wx
    E = np.stack([wc @ Y, wx @ Y], axis=-1)
    F = np.stack([wc.sum(-1), wx.sum(-1)], axis=-1) - E
    gamma = n_group / (E + F)
    return WeightedCounts(1.0 + gamma * E, 1.0 + gamma * F, gamma, n_group)


@dataclass(frozen=True)
class CausalSummary:
    """Posterior draws of the arm-level risks and their difference."""

    p0: np.ndarray
    p1: np.ndarray
    counts: WeightedCounts | None = None

    @property
    def delta(self) -> np.ndarray:
        return self.p1 - self.p0

    @property
    def mean_delta(self) -> float:
        return float(np.mean(self.delta))

    @property
    def interval(self) -> tuple:
        lo, hi = np.quantile(self.delta, [0.025, 0.975])
        return float(lo), float(hi)

    @property
    def width(self) -> float:
        lo, hi = self.interval
        return hi - lo

    def covers(self, value=0.0) -> bool:
        lo, hi = self.interval
        return lo <= value <= hi

    def to_json(self, outcome: str) -> dict:
        """Percent-scale summary record."""
        lo, hi = self.interval
        return {
            "outcome": outcome,
            "mean_delta": 100 * self.mean_delta,
            "ci_low": 100 * lo,
            "ci_high": 100 * hi,
            "ci_width": 100 * (hi - lo),
            "p0_mean": 100 * float(np.mean(self.p0)),
            "p1_mean": 100 * float(np.mean(self.p1)),
        }

    def table_cell(self) -> str:
        """Percent scale, one decimal: ``-3.4 (-4.1, -2.7)``."""
        lo, hi = self.interval
        return f"{100 * self.mean_delta:.1f} ({100 * lo:.1f}, {100 * hi:.1f})"


def _beta_pairs(a_star, b_star, rng_seed):
    # one generator per draw, seeded from (seed, draw index)
    S = a_star.shape[0]
    p = np.empty((S, 2))
    for s in range(S):
        rng = np.random.default_rng([rng_seed, s])
        p[s, 0] = rng.beta(a_star[s, 0], b_star[s, 0])
        p[s, 1] = rng.beta(a_star[s, 1], b_star[s, 1])
    return p


def _outcome(dataset: AnalysisDataset, outcome: str):
    if outcome not in dataset.Y:
        raise ValidationError(f"unknown outcome {outcome!r}; have {dataset.outcome_names}")
    return dataset.Y[outcome]


def draw_causal(propensity, dataset: AnalysisDataset, outcome: str,
                rng_seed: int = 0) -> CausalSummary:
    """Posterior of the risk difference for `outcome`.

    Parameters
    ----------
    propensity : (S, n) array
        Propensity draws, e.g. from `propensity_draws`. A single vector is
        treated as one draw.
    dataset : AnalysisDataset
    outcome : str
    rng_seed : int
        Draw ``s`` uses a generator seeded with ``(rng_seed, s)``.
    """
    pi = np.atleast_2d(np.asarray(propensity, dtype=float))
    counts = weighted_beta_params(pi, dataset.X, _outcome(dataset, outcome))
    p = _beta_pairs(counts.a_star, counts.b_star, rng_seed)
    return CausalSummary(p[:, 0], p[:, 1], counts)


def unadjusted_summary(dataset: AnalysisDataset, outcome: str, n_draws: int,
                       rng_seed: int = 0) -> CausalSummary:
    """Beta(1 + events, 1 + non-events) per arm with no weighting."""
    X = _binary(dataset.X, "treatment")
    Y = _binary(_outcome(dataset, outcome), "outcome")
    n_group = _arms(X)
    events = np.array([Y[X == 0].sum(), Y[X == 1].sum()])
    a = np.broadcast_to(1.0 + events, (n_draws, 2))
    b = np.broadcast_to(1.0 + n_group - events, (n_draws, 2))
    p = _beta_pairs(a, b, rng_seed)
    counts = WeightedCounts(a, b, np.ones((n_draws, 2)), n_group)
    return CausalSummary(p[:, 0], p[:, 1], counts)


def propensity_draws(model, draws, max_draws: int | None = None) -> np.ndarray:
    """Clamped propensity scores (S, n) for the flattened posterior draws.

    ``max_draws`` thins evenly to at most that many draws.
    """
    theta = draws.flat() if hasattr(draws, "flat") and callable(draws.flat) else np.atleast_2d(draws)
    if max_draws is not None and theta.shape[0] > max_draws:
        idx = np.linspace(0, theta.shape[0] - 1, max_draws).round().astype(int)
        theta = theta[idx]
    return np.atleast_2d(model.predict_propensity(theta))


def positivity_count(propensity, bounds=POSITIVITY_BOUNDS) -> int:
    """Subjects whose posterior-mean propensity falls outside `bounds`."""
    pi = np.atleast_2d(propensity).mean(axis=0)
    return int(np.sum((pi < bounds[0]) | (pi > bounds[1])))


@dataclass(frozen=True)
class BalanceReport:
    """Standardized differences (percent scale), one column per covariate."""

    names: list
    draws: np.ndarray
    constant: np.ndarray

    @property
    def mean_sd(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    @property
    def q025(self) -> np.ndarray:
        return np.quantile(self.draws, 0.025, axis=0)

    @property
    def q975(self) -> np.ndarray:
        return np.quantile(self.draws, 0.975, axis=0)

    @property
    def flag_mean(self) -> np.ndarray:
        return np.abs(self.mean_sd) >= BALANCE_LIMIT

    @property
    def flag_interval(self) -> np.ndarray:
        return (self.q025 <= -BALANCE_LIMIT) | (self.q975 >= BALANCE_LIMIT)

    @property
    def n_mean_outside(self) -> int:
        return int(self.flag_mean.sum())

    @property
    def n_interval_outside(self) -> int:
        return int(self.flag_interval.sum())

    def rows(self) -> list:
        return [
            {"covariate": name, "mean_sd": m, "q025": lo, "q975": hi,
             "flag_mean": int(fm), "flag_interval": int(fi)}
            for name, m, lo, hi, fm, fi in zip(self.names, self.mean_sd, self.q025,
                                               self.q975, self.flag_mean, self.flag_interval)
        ]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, ["covariate", "mean_sd", "q025", "q975",
                                    "flag_mean", "flag_interval"], lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())


def _covariates(dataset):
    Z = np.column_stack([dataset.B, np.asarray(dataset.C, dtype=float)])
    return Z, list(dataset.B_names) + list(dataset.C_names)


def pooled_sd(dataset: AnalysisDataset) -> np.ndarray:
    """sqrt((s1^2 + s0^2) / 2) from the raw, unweighted arms."""
    Z, _ = _covariates(dataset)
    X = _binary(dataset.X, "treatment")
    _arms(X)
    g1, g0 = Z[X == 1], Z[X == 0]
    v1 = g1.var(axis=0, ddof=1) if len(g1) > 1 else np.zeros(Z.shape[1])
    v0 = g0.var(axis=0, ddof=1) if len(g0) > 1 else np.zeros(Z.shape[1])
    return np.sqrt((v1 + v0) / 2.0)


def standardized_differences(propensity, dataset: AnalysisDataset) -> BalanceReport:
    """Weighted standardized mean differences over B and C columns, per draw.

    A covariate with zero pooled SD gets 0 in every draw and is flagged in
    ``BalanceReport.constant``.
    """
    pi = np.atleast_2d(np.asarray(propensity, dtype=float))
    Z, names = _covariates(dataset)
    X = _binary(dataset.X, "treatment")
    sd = pooled_sd(dataset)
    w = ipw_weights(pi, X)
    w1 = w * X
    w0 = w - w1
    m1 = (w1 @ Z) / w1.sum(axis=1, keepdims=True)
    m0 = (w0 @ Z) / w0.sum(axis=1, keepdims=True)
    constant = sd == 0
    safe = np.where(constant, 1.0, sd)
    d = np.where(constant, 0.0, 100.0 * (m1 - m0) / safe)
    return BalanceReport(names, d, constant)


def unadjusted_balance(dataset: AnalysisDataset) -> BalanceReport:
    """Classic unweighted standardized differences (a single 'draw')."""
    rate = float(np.mean(dataset.X))
    return standardized_differences(np.full((1, dataset.n), rate), dataset)
