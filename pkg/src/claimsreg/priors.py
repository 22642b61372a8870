"""Prior families used for propensity-model coefficients.

Each family is a small frozen dataclass. The module-level functions dispatch
on the family and accept scalars or numpy arrays:

>>> log_density(NormalScale(0.0, 10.0), 0.0)  # doctest: +ELLIPSIS
-3.221...
>>> grad_log_density(HierarchicalLaplace(0.5), 3.0, aux=2.0)
(-2.0, 2.0)

Families whose density depends on auxiliary quantities (horseshoe local and
global scales, the group mean of the hierarchical Laplace) take them through
``aux``; their normalizing terms in those quantities are always kept so the
densities can be used inside a joint posterior.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from .errors import ValidationError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NormalScale:
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        _positive(self.scale, "scale")


@dataclass(frozen=True)
class StudentT:
    df: float = 5.0
    loc: float = 0.0
    scale: float = 2.5

    def __post_init__(self):
        _positive(self.scale, "scale")
        _positive(self.df, "df")


@dataclass(frozen=True)
class HalfStudentT:
    """Student-t folded onto the positive half-line (df=1 is half-Cauchy)."""

    df: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        _positive(self.scale, "scale")
        _positive(self.df, "df")


@dataclass(frozen=True)
class Horseshoe:
    """beta ~ N(0, lam^2 tau^2), lam ~ t_{local_df}^+(0, 1), tau ~ Cauchy^+(0, 1)."""

    local_df: float = 3.0
    global_scale: float = 1.0

    @property
    def local(self) -> HalfStudentT:
        return HalfStudentT(self.local_df, 1.0)

    @property
    def glob(self) -> HalfStudentT:
        return HalfStudentT(1.0, self.global_scale)


@dataclass(frozen=True)
class HierarchicalLaplace:
    """beta ~ Laplace(mu, scale) with mu ~ hyper.

    With ``loc`` set the group mean is fixed and the family is a plain
    Laplace distribution; otherwise the group mean is passed through ``aux``
    (densities) or drawn from ``hyper`` (sampling). ``smoothing`` > 0 replaces
    |x - mu| by sqrt((x - mu)^2 + smoothing^2) - smoothing.
    """

    scale: float = 0.5
    hyper: StudentT = field(default_factory=lambda: StudentT(5.0, 0.0, 2.5))
    loc: float | None = None
    smoothing: float = 0.0

    def __post_init__(self):
        _positive(self.scale, "scale")


PriorSpec = NormalScale | StudentT | HalfStudentT | Horseshoe | HierarchicalLaplace


def _positive(value, name):
    if not np.all(np.asarray(value) > 0):
        raise ValidationError(f"{name} must be strictly positive")


def _scalarize(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


@lru_cache(maxsize=32)
def _t_const(df):
    return float(special.gammaln((df + 1) / 2) - special.gammaln(df / 2)
                 - 0.5 * np.log(df * np.pi))


def _t_logpdf(z, df):
    return _t_const(float(df)) - (df + 1) / 2 * np.log1p(z * z / df)


def _laplace_group_mean(spec, aux):
    mu = spec.loc if aux is None else aux
    if mu is None:
        raise ValidationError("hierarchical Laplace needs the group mean via aux or loc")
    return np.asarray(mu, dtype=float)


def _abs_smooth(d, eps):
    if eps > 0:
        r = np.sqrt(d * d + eps * eps)
        return r - eps, d / r
    return np.abs(d), np.sign(d)


def log_density(spec: PriorSpec, value, aux=None):
    """Log prior density at `value`.

    aux
        ``(lam, tau)`` for `Horseshoe`; the group mean for `HierarchicalLaplace`
        (unless ``spec.loc`` is set). Ignored otherwise.
    """
    x = np.asarray(value, dtype=float)
    if isinstance(spec, NormalScale):
        z = (x - spec.loc) / spec.scale
        out = -0.5 * z * z - np.log(spec.scale) - _LOG_SQRT_2PI
    elif isinstance(spec, StudentT):
        out = _t_logpdf((x - spec.loc) / spec.scale, spec.df) - np.log(spec.scale)
    elif isinstance(spec, HalfStudentT):
        out = np.where(x >= 0, np.log(2.0) + _t_logpdf(x / spec.scale, spec.df)
                       - np.log(spec.scale), -np.inf)
    elif isinstance(spec, Horseshoe):
        if aux is None:
            raise ValidationError("horseshoe density needs aux=(lam, tau)")
        lam, tau = (np.asarray(a, dtype=float) for a in aux)
        _positive(lam, "local scale")
        _positive(tau, "global scale")
        s = lam * tau
        out = -0.5 * (x / s) ** 2 - np.log(s) - _LOG_SQRT_2PI
    elif isinstance(spec, HierarchicalLaplace):
        mu = _laplace_group_mean(spec, aux)
        a, _ = _abs_smooth(x - mu, spec.smoothing)
        out = -a / spec.scale - np.log(2.0 * spec.scale)
    else:
        raise TypeError(f"unknown prior family {type(spec).__name__}")
    return _scalarize(out)


def grad_log_density(spec: PriorSpec, value, aux=None):
    """Derivative of `log_density` in `value`.

    For families taking ``aux`` the result is a tuple ``(d_value, *d_aux)``:
    ``(d_value, d_lam, d_tau)`` for the horseshoe and ``(d_value, d_mu)`` for
    the hierarchical Laplace. At the Laplace kink the derivative is 0.
    """
    x = np.asarray(value, dtype=float)
    if isinstance(spec, NormalScale):
        return _scalarize(-(x - spec.loc) / spec.scale ** 2)
    if isinstance(spec, StudentT):
        d = x - spec.loc
        return _scalarize(-(spec.df + 1) * d / (spec.df * spec.scale ** 2 + d * d))
    if isinstance(spec, HalfStudentT):
        return _scalarize(-(spec.df + 1) * x / (spec.df * spec.scale ** 2 + x * x))
    if isinstance(spec, Horseshoe):
        if aux is None:
            raise ValidationError("horseshoe gradient needs aux=(lam, tau)")
        lam, tau = (np.asarray(a, dtype=float) for a in aux)
        _positive(lam, "local scale")
        _positive(tau, "global scale")
        s2 = (lam * tau) ** 2
        d_x = -x / s2
        common = x * x / s2 - 1.0
        return _scalarize(d_x), _scalarize(common / lam), _scalarize(common / tau)
    if isinstance(spec, HierarchicalLaplace):
        explicit_aux = aux is not None
        mu = _laplace_group_mean(spec, aux)
        _, sgn = _abs_smooth(x - mu, spec.smoothing)
        d_x = -sgn / spec.scale
        if explicit_aux:
            return _scalarize(d_x), _scalarize(-d_x)
        return _scalarize(d_x)
    raise TypeError(f"unknown prior family {type(spec).__name__}")


def _rng(rng_seed):
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def sample_prior(spec: PriorSpec, n_draws: int, rng_seed=None) -> np.ndarray:
    """Draw `n_draws` i.i.d. values from the prior (scale mixtures marginalized)."""
    if n_draws < 1:
        raise ValidationError("n_draws must be >= 1")
    rng = _rng(rng_seed)
    if isinstance(spec, NormalScale):
        return spec.loc + spec.scale * rng.standard_normal(n_draws)
    if isinstance(spec, StudentT):
        return spec.loc + spec.scale * rng.standard_t(spec.df, n_draws)
    if isinstance(spec, HalfStudentT):
        return spec.scale * np.abs(rng.standard_t(spec.df, n_draws))
    if isinstance(spec, Horseshoe):
        lam = sample_prior(spec.local, n_draws, rng)
        tau = sample_prior(spec.glob, n_draws, rng)
        return rng.standard_normal(n_draws) * lam * tau
    if isinstance(spec, HierarchicalLaplace):
        mu = spec.loc if spec.loc is not None else sample_prior(spec.hyper, n_draws, rng)
        return mu + rng.laplace(0.0, spec.scale, n_draws)
    raise TypeError(f"unknown prior family {type(spec).__name__}")


class IntervalMass(NamedTuple):
    mass: float
    se: float


def interval_mass(spec: PriorSpec, lo: float, hi: float, n_draws: int = 1_000_000,
                  rng_seed=0) -> IntervalMass:
    """Prior probability of (lo, hi).

    Exact for families with a closed-form CDF (``se`` = 0); Monte Carlo with a
    binomial standard error for the horseshoe and a hierarchical Laplace
    whose group mean is not fixed.
    """
    if not lo < hi:
        raise ValidationError("interval must satisfy lo < hi")
    dist = None
    if isinstance(spec, NormalScale):
        dist = stats.norm(spec.loc, spec.scale)
    elif isinstance(spec, StudentT):
        dist = stats.t(spec.df, spec.loc, spec.scale)
    elif isinstance(spec, HalfStudentT):
        dist = stats.halfcauchy(0, spec.scale) if spec.df == 1 else None
        if dist is None:
            t = stats.t(spec.df, 0, spec.scale)
            m = 2 * (t.cdf(max(hi, 0)) - t.cdf(max(lo, 0)))
            return IntervalMass(float(m), 0.0)
    elif isinstance(spec, HierarchicalLaplace) and spec.loc is not None:
        if spec.smoothing == 0:
            dist = stats.laplace(spec.loc, spec.scale)
    if dist is not None:
        return IntervalMass(float(dist.cdf(hi) - dist.cdf(lo)), 0.0)
    draws = sample_prior(spec, n_draws, rng_seed)
    m = float(np.mean((draws > lo) & (draws < hi)))
    return IntervalMass(m, float(np.sqrt(m * (1 - m) / n_draws)))
