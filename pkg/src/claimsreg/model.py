"""Bayesian logistic propensity models over registry covariates and claims.

The linear predictor is ``beta0 + B_std @ beta_B + C @ beta_C`` where
``B_std`` holds the baseline covariates standardized to mean 0 / sd 1 and
``C`` the claims columns as given. The sampled intercept slot is the
intercept at the mean claims profile, ``beta0 + mean(C) @ beta_C``; this
removes most of the posterior correlation between the intercept and the
claims coefficients. It is a unit-Jacobian shear, and the intercept prior
is still placed on ``beta0``. Families differ only in how ``beta_C`` is
parameterized and which prior it receives:

==========================  ===============================================
family                      claims block
==========================  ===============================================
``unadjusted``              none; intercept only, no baseline covariates
``t5_4digit``               t5(0, 2.5) on every claims column
``t5_3digit``               claims collapsed to 3-character prefixes, t5
``horseshoe_4digit``        non-centered horseshoe: beta = z * lam * tau
``hierarchical``            Laplace(mu_l, 0.5) within groups, t5 on mu_l
                            and on singleton codes
``comorbidity_indicator``   t5 on category indicators
``comorbidity_continuous``  t5 on a single raw comorbidity score
==========================  ===============================================

Positive scales are sampled on the log scale and the log-Jacobian is included
in the log posterior.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import priors as pr
from ._kernels import bernoulli_logit_grad
from .errors import ModelError, ValidationError
from .ingest import AnalysisDataset, CodeHierarchy, build_hierarchy, collapse_to_prefix3

FAMILIES = (
    "unadjusted",
    "t5_3digit",
    "t5_4digit",
    "horseshoe_4digit",
    "hierarchical",
    "comorbidity_indicator",
    "comorbidity_continuous",
)

INTERCEPT_PRIOR = pr.NormalScale(0.0, 10.0)
WEAK_PRIOR = pr.StudentT(5.0, 0.0, 2.5)
HORSESHOE = pr.Horseshoe(local_df=3.0)
LAPLACE = pr.HierarchicalLaplace(scale=0.5, hyper=WEAK_PRIOR)
STD_NORMAL = pr.NormalScale(0.0, 1.0)

PROPENSITY_EPS = 1e-12

# closed-form pieces of the priors above, precomputed for the sampler's inner loop
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_T_DF1 = WEAK_PRIOR.df + 1.0
_T_HALF_DF1 = _T_DF1 / 2.0
_T_DS2 = WEAK_PRIOR.df * WEAK_PRIOR.scale ** 2
_T_CONST = float(pr.log_density(WEAK_PRIOR, 0.0))
_INTERCEPT_CONST = float(pr.log_density(INTERCEPT_PRIOR, INTERCEPT_PRIOR.loc))
_HALF_T_CONST = float(pr.log_density(HORSESHOE.local, 0.0))
_HALF_CAUCHY_CONST = float(pr.log_density(HORSESHOE.glob, 0.0))


@dataclass(frozen=True)
class ParameterLayout:
    """Slot table of the unconstrained parameter vector.

    ``blocks`` maps a block name (``beta0``, ``beta_B``, ``beta_C``, ``z``,
    ``log_lambda``, ``log_tau``, ``mu``) to a slice of the vector.
    """

    names: tuple
    blocks: dict

    @property
    def dim(self) -> int:
        return len(self.names)

    def block(self, theta, name):
        return theta[..., self.blocks[name]]

    def has(self, name) -> bool:
        return name in self.blocks

    def slot_name(self, index: int) -> str:
        return self.names[index]


def _build_layout(family, B_names, C_names, hierarchy):
    names, blocks = [], {}

    def add(block, labels):
        start = len(names)
        names.extend(labels)
        blocks[block] = slice(start, len(names))

    add("beta0", ["beta0"])
    if family == "unadjusted":
        return ParameterLayout(tuple(names), blocks)
    add("beta_B", [f"beta_B[{b}]" for b in B_names])
    if family == "horseshoe_4digit":
        add("z", [f"z[{c}]" for c in C_names])
        add("log_lambda", [f"log_lambda[{c}]" for c in C_names])
        add("log_tau", ["log_tau"])
    else:
        add("beta_C", [f"beta_C[{c}]" for c in C_names])
        if family == "hierarchical":
            add("mu", [f"mu[{g.prefix3}]" for g in hierarchy.groups])
    return ParameterLayout(tuple(names), blocks)


class PropensityModel:
    """Log posterior, gradient and predictions for one prior family.

    Parameters
    ----------
    dataset : AnalysisDataset
        For the claims-code families the claims matrix should already be
        prevalence filtered; for comorbidity families it should already be
        reduced with `apply_comorbidity_index`.
    family : str
        One of `FAMILIES`.
    hierarchy : CodeHierarchy, optional
        Used by ``hierarchical``; built from the claims columns if omitted.
    """

    def __init__(self, dataset: AnalysisDataset, family: str = "t5_4digit",
                 hierarchy: CodeHierarchy | None = None):
        if family not in FAMILIES:
            raise ValidationError(f"unknown prior family {family!r}")
        self.family = family
        self.source = dataset
        if family == "t5_3digit":
            dataset = collapse_to_prefix3(dataset)
        self.dataset = dataset
        self.hierarchy = None
        if family == "hierarchical":
            self.hierarchy = hierarchy if hierarchy is not None else build_hierarchy(dataset)
            if self.hierarchy.n_codes != dataset.p:
                raise ValidationError("hierarchy does not cover the claims columns")

        self.X = np.asarray(dataset.X, dtype=float)
        self._sign = 2.0 * self.X - 1.0
        if family == "unadjusted":
            B = np.zeros((dataset.n, 0))
            C = np.zeros((dataset.n, 0))
            B_names, C_names = [], []
        else:
            B = np.asarray(dataset.B, dtype=float)
            C = np.asarray(dataset.C, dtype=float)
            B_names, C_names = dataset.B_names, dataset.C_names
        self.B_names, self.C_names = list(B_names), list(C_names)

        n = dataset.n
        self.B_mean = B.mean(axis=0) if n else np.zeros(B.shape[1])
        sd = B.std(axis=0) if n else np.ones(B.shape[1])
        self.B_sd = np.where(sd > 0, sd, 1.0)
        self._dense = np.column_stack([np.ones(n), (B - self.B_mean) / self.B_sd])
        self.C_mean = C.mean(axis=0) if n else np.zeros(C.shape[1])
        self._C = sparse.csr_matrix(C)
        self._C.sort_indices()
        self.layout = _build_layout(family, B_names, C_names, self.hierarchy)
        if self.hierarchy is not None:
            self._init_groups()
        self._init_prior_slots()

    def _init_groups(self):
        pos = {c: j for j, c in enumerate(self.C_names)}
        member_idx, member_group = [], []
        for g in self.hierarchy.groups:
            for c in g.members:
                member_idx.append(pos[c])
                member_group.append(g.index)
        self._member_idx = np.array(member_idx, dtype=int)
        self._member_group = np.array(member_group, dtype=int)
        self._single_idx = np.array([pos[c] for c in self.hierarchy.singletons], dtype=int)

    # -- layout helpers -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def names(self) -> tuple:
        return self.layout.names

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def n_claims_vars(self) -> int:
        return len(self.C_names)

    def claims_coefficients(self, theta):
        """beta_C for a parameter vector or an (S, P) matrix of draws."""
        theta = np.asarray(theta, dtype=float)
        lay = self.layout
        if self.family == "unadjusted":
            return theta[..., :0]
        if self.family == "horseshoe_4digit":
            z = lay.block(theta, "z")
            lam = np.exp(lay.block(theta, "log_lambda"))
            tau = np.exp(lay.block(theta, "log_tau"))
            return z * lam * tau
        return lay.block(theta, "beta_C")

    def regression_coefficients(self, theta):
        """(intercept, beta_B, beta_C) on the internal (standardized B) scale."""
        theta = np.asarray(theta, dtype=float)
        bC = self.claims_coefficients(theta)
        b0 = self.layout.block(theta, "beta0") - (bC @ self.C_mean)[..., None]
        bB = (self.layout.block(theta, "beta_B") if self.layout.has("beta_B")
              else theta[..., :0])
        return b0, bB, bC

    def _prior_view(self, theta):
        # intercept slot replaced by beta0 itself
        b0 = self.regression_coefficients(theta)[0]
        th = theta.copy()
        th[0] = b0[0]
        return th

    def original_scale_coefficients(self, theta) -> dict:
        """Coefficients with baseline effects mapped back to the raw B scale."""
        b0, bB, bC = self.regression_coefficients(theta)
        slope = bB / self.B_sd
        intercept = b0[..., 0] - (slope * self.B_mean).sum(axis=-1)
        return {"beta0": intercept, "beta_B": slope, "beta_C": bC}

    # -- linear predictor -----------------------------------------------

    def linear_predictor(self, theta) -> np.ndarray:
        """eta for a vector (shape (n,)) or a matrix of draws (shape (S, n))."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise ValidationError(
                f"parameter dimension {theta.shape[-1]} does not match model ({self.dim})")
        b0, bB, bC = self.regression_coefficients(theta)
        dense_coef = np.concatenate([b0, bB], axis=-1)
        eta = self._dense @ dense_coef.T
        if bC.shape[-1]:
            eta = eta + self._C @ bC.T
        return np.asarray(eta.T)

    def predict_propensity(self, theta, clamp: bool = True) -> np.ndarray:
        eta = self.linear_predictor(theta)
        pi = 0.5 * (1.0 + np.tanh(0.5 * eta))
        if clamp:
            pi = np.clip(pi, PROPENSITY_EPS, 1.0 - PROPENSITY_EPS)
        return pi

    def pointwise_log_lik(self, theta) -> np.ndarray:
        """Per-subject Bernoulli log-likelihood; (n,) or (S, n)."""
        z = self._sign * self.linear_predictor(theta)
        return np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))

    # -- posterior --------------------------------------------------------

    def _init_prior_slots(self):
        lay = self.layout
        P = lay.dim
        t_slots = []
        if lay.has("beta_B"):
            t_slots.extend(range(P)[lay.blocks["beta_B"]])
        if self.family == "hierarchical":
            c0 = lay.blocks["beta_C"].start
            t_slots.extend(c0 + self._single_idx)
            t_slots.extend(range(P)[lay.blocks["mu"]])
            self._lap_slots = c0 + self._member_idx
            self._lap_mu_slots = lay.blocks["mu"].start + self._member_group
        elif lay.has("beta_C"):
            t_slots.extend(range(P)[lay.blocks["beta_C"]])
        self._t_slots = np.array(sorted(t_slots), dtype=int)

    def _slot_log_prior(self, theta):
        """Per-slot log-prior contributions (incl. Jacobians) and their gradient.

        Hierarchical Laplace terms are attributed to the member-code slot.
        """
        lp = np.zeros_like(theta)
        grad = np.zeros_like(theta)
        z0 = (theta[0] - INTERCEPT_PRIOR.loc) / INTERCEPT_PRIOR.scale
        lp[0] = -0.5 * z0 * z0 + _INTERCEPT_CONST
        grad[0] = -z0 / INTERCEPT_PRIOR.scale
        ts = self._t_slots
        if ts.size:
            x = theta[ts]
            lp[ts] = _T_CONST - _T_HALF_DF1 * np.log1p(x * x / _T_DS2)
            grad[ts] = -_T_DF1 * x / (_T_DS2 + x * x)
        if self.family == "horseshoe_4digit":
            lay = self.layout
            sz, sl, st = lay.blocks["z"], lay.blocks["log_lambda"], lay.blocks["log_tau"]
            z = theta[sz]
            lp[sz] = -0.5 * z * z - _LOG_SQRT_2PI
            grad[sz] = -z
            u = theta[sl]
            lam2 = np.exp(2.0 * u)
            nu = HORSESHOE.local_df
            lp[sl] = _HALF_T_CONST - (nu + 1) / 2 * np.log1p(lam2 / nu) + u
            grad[sl] = 1.0 - (nu + 1) * lam2 / (nu + lam2)
            v = theta[st]
            tau2 = np.exp(2.0 * v)
            lp[st] = _HALF_CAUCHY_CONST - np.log1p(tau2) + v
            grad[st] = 1.0 - 2.0 * tau2 / (1.0 + tau2)
        elif self.family == "hierarchical" and self._lap_slots.size:
            d = theta[self._lap_slots] - theta[self._lap_mu_slots]
            b = LAPLACE.scale
            lp[self._lap_slots] = -np.abs(d) / b - np.log(2.0 * b)
            g = -np.sign(d) / b
            grad[self._lap_slots] = g
            grad += np.bincount(self._lap_mu_slots, weights=-g, minlength=theta.size)
        return lp, grad

    def log_prior(self, theta) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            th = self._prior_view(np.asarray(theta, dtype=float))
            return float(np.sum(self._slot_log_prior(th)[0]))

    def log_posterior_and_grad(self, theta):
        """Joint log posterior and its gradient in the unconstrained space."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValidationError(
                f"parameter vector has shape {theta.shape}, model needs ({self.dim},)")
        with np.errstate(over="ignore", invalid="ignore"):
            lp_slots, grad = self._slot_log_prior(self._prior_view(theta))
            b0, bB, bC = self.regression_coefficients(theta)
            loglik, g_dense, g_C = bernoulli_logit_grad(
                self._dense, self._C.indptr, self._C.indices, self._C.data, self.X,
                np.concatenate([b0, bB]), np.ascontiguousarray(bC))
            lay = self.layout
            grad[0] += g_dense[0]
            if lay.has("beta_B"):
                grad[lay.blocks["beta_B"]] += g_dense[1:]
            if bC.size:
                # beta0 = slot - C_mean @ beta_C
                g_C = g_C - self.C_mean * grad[0]
                if self.family == "horseshoe_4digit":
                    scale = np.exp(lay.block(theta, "log_lambda") + lay.block(theta, "log_tau"))
                    grad[lay.blocks["z"]] += g_C * scale
                    contrib = g_C * bC
                    grad[lay.blocks["log_lambda"]] += contrib
                    grad[lay.blocks["log_tau"]] += contrib.sum()
                else:
                    grad[lay.blocks["beta_C"]] += g_C
            lp = loglik + float(np.sum(lp_slots))
        if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
            raise ModelError(self._diagnose(theta, lp_slots, loglik, grad))
        return lp, grad

    def _diagnose(self, theta, lp_slots, loglik, grad):
        for what, arr in (("parameter", theta), ("log prior", lp_slots), ("gradient", grad)):
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                return f"non-finite {what} in slot {self.names[bad[0]]}"
        return "non-finite log-likelihood"

    def log_posterior(self, theta) -> float:
        return self.log_posterior_and_grad(theta)[0]

    def grad_log_posterior(self, theta) -> np.ndarray:
        return self.log_posterior_and_grad(theta)[1]

    # sampler protocol
    def logp_and_grad(self, theta):
        return self.log_posterior_and_grad(theta)
