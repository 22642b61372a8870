"""Hamiltonian Monte Carlo with jittered path length, dual-averaging step size
adaptation and a diagonal mass matrix, plus split-R-hat and effective sample
size.

A target is any object with a ``dim`` attribute and a ``logp_and_grad(theta)``
method returning ``(log_density, gradient)``; an optional ``names`` attribute
labels the parameter slots. `claimsreg.model.PropensityModel` satisfies this.

Warmup is split into three windows (15% / 60% / 25% of the warmup draws):

1. step size only, unit mass;
2. step size plus mass: the window is halved and at the end of each half the
   inverse mass is set to the (regularized) variance of the second half of
   that half's draws, after which dual averaging restarts;
3. step size only with the final mass; the averaged step size is then frozen.

Each iteration draws its leapfrog count uniformly from ``[1, L_max]`` where
``L_max = ceil(2 * trajectory_length / step_size)`` (capped at
``max_leapfrog``), so the expected integration time is about
``trajectory_length``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateChainWarning, DivergenceWarning, LayoutMismatchError,
                     ModelError, ValidationError)

DIVERGENCE_THRESHOLD = 1000.0
MAX_INIT_TRIES = 100

# Hoffman & Gelman dual averaging constants
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    target_accept: float = 0.8
    max_leapfrog: int = 1024
    seed: int = 0
    init_jitter: float = 2.0
    trajectory_length: float = 1.0
    threads: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValidationError("chains must be >= 1")
        if self.warmup < 1 or self.samples < 1:
            raise ValidationError("warmup and samples must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValidationError("target_accept must lie in (0, 1)")
        if self.max_leapfrog < 1:
            raise ValidationError("max_leapfrog must be >= 1")


@dataclass
class PosteriorDraws:
    """Post-warmup draws of shape (chains, samples, P) and per-chain tuning."""

    draws: np.ndarray
    names: tuple
    divergences: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    step_size: np.ndarray = field(default_factory=lambda: np.zeros(0))
    inv_mass: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    accept_rate: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_samples(self) -> int:
        return self.draws.shape[1]

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    @property
    def divergence_fraction(self) -> float:
        total = self.n_chains * self.n_samples
        return float(np.sum(self.divergences)) / total if total else 0.0

    @property
    def unreliable(self) -> bool:
        return self.divergence_fraction > 0.10

    def flat(self) -> np.ndarray:
        """Draws stacked chain after chain, shape (chains * samples, P)."""
        return self.draws.reshape(-1, self.dim)

    def column(self, name) -> np.ndarray:
        return self.draws[:, :, self.names.index(name)]

    def summary(self) -> dict:
        rhat = split_rhat(self.draws)
        ess = effective_sample_size(self.draws)
        return {
            "max_rhat": float(np.max(rhat)) if rhat.size else float("nan"),
            "min_ess": float(np.min(ess)) if ess.size else float("nan"),
            "divergences": int(np.sum(self.divergences)),
            "divergence_fraction": self.divergence_fraction,
            "unreliable": self.unreliable,
        }

    def to_csv(self, path):
        """One row per draw: ``chain, iter`` then one named column per slot."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iter", *self.names])
            for c in range(self.n_chains):
                for s in range(self.n_samples):
                    w.writerow([c, s, *map(repr, self.draws[c, s].tolist())])

    @classmethod
    def from_csv(cls, path, expected_names=None) -> "PosteriorDraws":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        if header[:2] != ["chain", "iter"]:
            raise ValidationError(f"{path}: first columns must be chain,iter")
        names = tuple(header[2:])
        if expected_names is not None:
            check_layout(names, expected_names)
        data = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), -1)
        chain = data[:, 0].astype(int)
        chains = np.unique(chain)
        per = [data[chain == c, 2:] for c in chains]
        if len({len(p) for p in per}) > 1:
            raise ValidationError(f"{path}: chains have unequal lengths")
        return cls(np.stack(per), names, np.zeros(len(chains), int))


def check_layout(found, expected):
    """Raise `LayoutMismatchError` naming the first slot that differs."""
    found, expected = tuple(found), tuple(expected)
    for i in range(max(len(found), len(expected))):
        a = found[i] if i < len(found) else "<missing>"
        b = expected[i] if i < len(expected) else "<missing>"
        if a != b:
            raise LayoutMismatchError(
                f"draws slot {i} is {a!r} but the model expects {b!r}")


def _evaluate(target, theta):
    try:
        lp, g = target.logp_and_grad(theta)
    except (ModelError, FloatingPointError, OverflowError):
        return -np.inf, None
    if not np.isfinite(lp) or not np.all(np.isfinite(g)):
        return -np.inf, None
    return lp, g


def _leapfrog(target, theta, p, grad, eps, n_steps, inv_mass):
    p = p + 0.5 * eps * grad
    for i in range(n_steps):
        theta = theta + eps * inv_mass * p
        lp, grad = _evaluate(target, theta)
        if grad is None:
            return theta, p, -np.inf, None
        if i < n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return theta, p, lp, grad


def _find_reasonable_step(target, theta, lp, grad, inv_mass, rng, eps=1.0):
    """Double or halve eps until a single leapfrog step crosses acceptance 0.5."""
    sqrt_mass = 1.0 / np.sqrt(inv_mass)
    p = rng.standard_normal(theta.size) * sqrt_mass
    h0 = -lp + 0.5 * np.sum(inv_mass * p * p)

    def log_accept(e):
        _, p1, lp1, g1 = _leapfrog(target, theta, p, grad, e, 1, inv_mass)
        if g1 is None:
            return -np.inf
        return h0 - (-lp1 + 0.5 * np.sum(inv_mass * p1 * p1))

    la = log_accept(eps)
    direction = 1 if la > math.log(0.5) else -1
    for _ in range(100):
        if direction == 1 and not la > math.log(0.5):
            break
        if direction == -1 and la > math.log(0.5):
            break
        eps = eps * (2.0 ** direction)
        la = log_accept(eps)
    return float(np.clip(eps, 1e-8, 1e3))


class _DualAveraging:
    def __init__(self, eps, target):
        self.mu = math.log(10.0 * eps)
        self.target = target
        self.t = 0
        self.h_bar = 0.0
        self.log_eps = math.log(eps)
        self.log_eps_bar = 0.0

    def update(self, accept):
        self.t += 1
        eta = 1.0 / (self.t + _DA_T0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept)
        self.log_eps = self.mu - math.sqrt(self.t) / _DA_GAMMA * self.h_bar
        w = self.t ** (-_DA_KAPPA)
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def _windows(warmup):
    w1 = int(0.15 * warmup)
    w3 = int(0.25 * warmup)
    w2 = warmup - w1 - w3
    half = w2 // 2
    # iteration indices (exclusive end) at which the mass matrix is re-estimated
    ends = [w1 + half, w1 + w2] if half >= 4 else ([w1 + w2] if w2 >= 4 else [])
    starts = [w1, w1 + half] if half >= 4 else [w1]
    return list(zip(starts, ends))


def _regularized_variance(x):
    n = x.shape[0]
    var = x.var(axis=0, ddof=1)
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _run_chain(target, cfg: SamplerConfig, seed_seq, chain_index):
    rng = np.random.default_rng(seed_seq)
    dim = target.dim
    for _ in range(MAX_INIT_TRIES):
        theta = rng.uniform(-cfg.init_jitter, cfg.init_jitter, dim)
        lp, grad = _evaluate(target, theta)
        if grad is not None:
            break
    else:
        raise ModelError(
            f"chain {chain_index}: no finite log posterior and gradient after "
            f"{MAX_INIT_TRIES} random initializations")

    inv_mass = np.ones(dim)
    eps = _find_reasonable_step(target, theta, lp, grad, inv_mass, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    windows = _windows(cfg.warmup)
    warm_trace = np.empty((cfg.warmup, dim))

    total = cfg.warmup + cfg.samples
    out = np.empty((cfg.samples, dim))
    divergences = 0
    accept_sum = 0.0
    for it in range(total):
        warm = it < cfg.warmup
        l_max = int(min(cfg.max_leapfrog, max(1, math.ceil(2 * cfg.trajectory_length / eps))))
        n_steps = int(rng.integers(1, l_max + 1))
        p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = -lp + 0.5 * np.sum(inv_mass * p0 * p0)
        th1, p1, lp1, g1 = _leapfrog(target, theta, p0, grad, eps, n_steps, inv_mass)
        if g1 is None:
            delta_h = np.inf
        else:
            delta_h = (-lp1 + 0.5 * np.sum(inv_mass * p1 * p1)) - h0
            if not np.isfinite(delta_h):
                delta_h = np.inf
        divergent = delta_h > DIVERGENCE_THRESHOLD
        accept = 0.0 if divergent else math.exp(min(0.0, -delta_h))
        if not divergent and rng.uniform() < accept:
            theta, lp, grad = th1, lp1, g1

        if warm:
            warm_trace[it] = theta
            eps = da.update(accept)
            for start, end in windows:
                if it + 1 == end:
                    seg = warm_trace[start + (end - start) // 2:end]
                    inv_mass = _regularized_variance(seg)
                    eps = _find_reasonable_step(target, theta, lp, grad, inv_mass, rng, da.final)
                    da = _DualAveraging(eps, cfg.target_accept)
            if it + 1 == cfg.warmup:
                eps = da.final
        else:
            out[it - cfg.warmup] = theta
            divergences += int(divergent)
            accept_sum += accept
    return out, divergences, eps, inv_mass, accept_sum / cfg.samples


def run_chains(target, config: SamplerConfig = SamplerConfig()) -> PosteriorDraws:
    """Sample `target` with independent chains seeded from ``config.seed``.

    Each chain owns a child of ``SeedSequence(config.seed)``, so running the
    chains in parallel (``config.threads`` > 1) gives the same draws as
    running them one after another.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    if config.threads > 1 and config.chains > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=min(config.threads, config.chains))(
            delayed(_run_chain)(target, config, s, c) for c, s in enumerate(seeds))
    else:
        results = [_run_chain(target, config, s, c) for c, s in enumerate(seeds)]
    names = tuple(getattr(target, "names", None) or
                  (f"theta[{i}]" for i in range(target.dim)))
    draws = PosteriorDraws(
        draws=np.stack([r[0] for r in results]),
        names=names,
        divergences=np.array([r[1] for r in results]),
        step_size=np.array([r[2] for r in results]),
        inv_mass=np.stack([r[3] for r in results]),
        accept_rate=np.array([r[4] for r in results]),
    )
    if draws.unreliable:
        warnings.warn(f"{draws.divergence_fraction:.1%} of transitions diverged; "
                      "the fit is unreliable", DivergenceWarning, stacklevel=2)
    return draws


def _as_array(draws):
    arr = draws.draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValidationError("draws must have shape (chains, samples[, params])")
    if arr.shape[1] < 4:
        raise ValidationError("need at least 4 samples per chain")
    return arr


def _split(arr):
    half = arr.shape[1] // 2
    return np.concatenate([arr[:, :half], arr[:, arr.shape[1] - half:]], axis=0)


def split_rhat(draws) -> np.ndarray:
    """Split-chain potential scale reduction factor per parameter.

    `draws` is a `PosteriorDraws` or an array of shape (chains, samples) or
    (chains, samples, P). Parameters with zero within-chain variance get
    ``inf`` and trigger a `DegenerateChainWarning`.
    """
    x = _split(_as_array(draws))
    m, n, _ = x.shape
    chain_means = x.mean(axis=1)
    within = x.var(axis=1, ddof=1).mean(axis=0)
    between = n * chain_means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * within + between / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / within)
    degenerate = ~(within > 0)
    if degenerate.any():
        rhat = np.where(degenerate, np.inf, rhat)
        warnings.warn(f"{degenerate.sum()} parameter(s) have zero within-chain variance",
                      DegenerateChainWarning, stacklevel=2)
    return rhat


def _autocovariance(x):
    """Biased autocovariance along axis 1 of an (m, n) array, via FFT."""
    n = x.shape[1]
    size = 1 << (2 * n - 1).bit_length()
    centered = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(centered, size, axis=1)
    return np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n


def effective_sample_size(draws) -> np.ndarray:
    """Multi-chain autocorrelation ESS on split chains.

    The autocorrelation sum uses Geyer's initial positive sequence: pairs
    ``rho[2k] + rho[2k+1]`` are accumulated until the first negative pair and
    forced to be non-increasing. Constant parameters get ESS 0 with a
    `DegenerateChainWarning`.
    """
    x = _split(_as_array(draws))
    m, n, P = x.shape
    ess = np.zeros(P)
    degenerate = 0
    for j in range(P):
        xj = x[:, :, j]
        acov = _autocovariance(xj)
        within = acov[:, 0].mean() * n / (n - 1)
        chain_means = xj.mean(axis=1)
        var_plus = within * (n - 1) / n
        if m > 1:
            var_plus += chain_means.var(ddof=1)
        if not var_plus > 0:
            degenerate += 1
            continue
        rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        tau = -1.0
        prev = np.inf
        for k in range(0, n - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            prev = pair
            tau += 2.0 * pair
        tau = max(tau, 1.0 / math.log10(m * n)) if m * n > 1 else 1.0
        ess[j] = m * n / tau
    if degenerate:
        warnings.warn(f"{degenerate} parameter(s) are constant; ESS set to 0",
                      DegenerateChainWarning, stacklevel=2)
    return ess
