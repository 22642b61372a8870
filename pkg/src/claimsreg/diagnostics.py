"""Pareto-smoothed importance sampling leave-one-out cross-validation."""
from __future__ import annotations

import math
import warnings
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import ParetoKWarning, ValidationError

K_THRESHOLD = 0.7


class GPDFit(NamedTuple):
    k: float
    sigma: float
    degenerate: bool = False


def fit_generalized_pareto(tail, prior_k: float = 10.0) -> GPDFit:
    """Fit the shape `k` and scale `sigma` of a generalized Pareto distribution.

    Uses the profile-likelihood empirical Bayes estimator of Zhang and Stephens
    (2009) with a weak prior pulling `k` towards 0.5, as in the PSIS reference
    implementation. `tail` holds positive exceedances over a threshold.

    A tail with no spread cannot be fitted; the result then has ``k = -inf``
    and ``degenerate=True``. A tail whose lower quarter is exactly zero while
    its maximum is positive gets ``k = inf``.
    """
    x = np.sort(np.asarray(tail, dtype=float))
    n = x.size
    if n < 5:
        raise ValidationError("need at least 5 exceedances to fit a Pareto tail")
    if x[-1] <= 0 or x[0] == x[-1]:
        return GPDFit(-math.inf, math.nan, True)

    m = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    xq = x[int(n / 4 + 0.5) - 1]
    if xq <= 0:
        # most exceedances underflowed next to the largest: unboundedly heavy tail
        return GPDFit(math.inf, math.nan, False)
    b /= 3.0 * xq
    b += 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    log_lik = n * (np.log(-b / k) - k - 1.0)
    with np.errstate(over="ignore"):
        w = 1.0 / np.exp(log_lik - log_lik[:, None]).sum(axis=1)
    keep = w >= 10 * np.finfo(float).eps
    w, b = w[keep], b[keep]
    w /= w.sum()
    b_post = float(np.sum(b * w))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return GPDFit(k_post, sigma, False)


def gpd_quantile(p, k, sigma):
    p = np.asarray(p, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma / k * np.expm1(-k * np.log1p(-p))


def tail_length(S: int) -> int:
    return min(math.ceil(0.2 * S), math.ceil(3 * math.sqrt(S)))


class PsisResult(NamedTuple):
    log_weights: np.ndarray
    k: float

    @property
    def weights(self):
        return np.exp(self.log_weights)


def psis_weights(log_ratios, tail_size: int | None = None) -> PsisResult:
    """Pareto-smoothed, normalized importance weights.

    The largest ``M = min(ceil(0.2 S), ceil(3 sqrt(S)))`` ratios are replaced by
    expected order statistics of a generalized Pareto fit to their exceedances,
    the result is truncated at the largest raw weight and normalized to sum 1.
    A degenerate tail (``k = -inf``) or an unfittable one (``k = inf``) leaves
    the raw weights untouched.
    """
    lw = np.asarray(log_ratios, dtype=float)
    S = lw.size
    if S < 25:
        raise ValidationError("Pareto smoothing needs at least 25 draws")
    if not np.all(np.isfinite(lw)):
        raise ValidationError("log importance ratios must be finite")
    lw = lw - lw.max()
    M = tail_size or tail_length(S)
    order = np.argsort(lw, kind="stable")
    cutoff = max(lw[order[-M - 1]], np.log(np.finfo(float).tiny))
    tail_idx = order[-M:]
    exceed = np.exp(lw[tail_idx]) - np.exp(cutoff)
    fit = fit_generalized_pareto(exceed)
    if not fit.degenerate and np.isfinite(fit.k):
        smoothed = gpd_quantile((np.arange(M) + 0.5) / M, fit.k, fit.sigma) + np.exp(cutoff)
        lw = lw.copy()
        lw[tail_idx] = np.log(smoothed)
        lw = np.minimum(lw, 0.0)
    return PsisResult(lw - logsumexp(lw), fit.k)


class LooResult(NamedTuple):
    elpd_loo: float
    loo_ic: float
    se: float
    pareto_k: np.ndarray
    n_bad_k: int
    elpd_pointwise: np.ndarray
    p_loo: float

    @property
    def loo_ic_se(self) -> float:
        """Standard error on the LOO-IC scale (twice the elpd standard error)."""
        return 2.0 * self.se

    def to_json(self) -> dict:
        return {"elpd_loo": self.elpd_loo, "loo_ic": self.loo_ic, "se": self.se,
                "loo_ic_se": self.loo_ic_se, "p_loo": self.p_loo, "n_bad_k": self.n_bad_k}


def loo_ic(loglik) -> LooResult:
    """PSIS-LOO from an (S draws, n subjects) pointwise log-likelihood matrix.

    ``se`` is the standard error of ``elpd_loo``: sqrt(n * var(elpd_i)).
    """
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2:
        raise ValidationError("log-likelihood matrix must be 2-D (draws x subjects)")
    S, n = ll.shape
    if not np.all(np.isfinite(ll)):
        bad = np.argwhere(~np.isfinite(ll))[0]
        raise ValidationError(f"non-finite log-likelihood for subject {bad[1]} (draw {bad[0]})")
    if S < 100:
        warnings.warn(f"only {S} draws; Pareto k estimates are unreliable below 100",
                      ParetoKWarning, stacklevel=2)
    elpd = np.empty(n)
    ks = np.empty(n)
    for i in range(n):
        res = psis_weights(-ll[:, i])
        elpd[i] = logsumexp(res.log_weights + ll[:, i])
        ks[i] = res.k
        if not np.isfinite(elpd[i]):
            raise ValidationError(f"non-finite elpd for subject {i}")
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(S)))
    elpd_loo = float(elpd.sum())
    se = float(math.sqrt(n * elpd.var(ddof=1))) if n > 1 else 0.0
    n_bad = int(np.sum(ks > K_THRESHOLD))
    if n_bad:
        warnings.warn(f"{n_bad} subject(s) with Pareto k > {K_THRESHOLD}",
                      ParetoKWarning, stacklevel=2)
    return LooResult(elpd_loo, -2.0 * elpd_loo, se, ks, n_bad, elpd, lppd - elpd_loo)
