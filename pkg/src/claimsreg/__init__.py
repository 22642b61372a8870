"""Bayesian propensity-score weighting with regularized models of claims codes.

Typical flow: `ingest.parse_claims` -> `model.PropensityModel` ->
`sampler.run_chains` -> `causal.draw_causal` / `causal.standardized_differences`
and `diagnostics.loo_ic` for model comparison.
"""
from .causal import (BalanceReport, CausalSummary, WeightedCounts, draw_causal, ipw_weights,
                     propensity_draws, standardized_differences, unadjusted_summary,
                     weighted_beta_params)
from .diagnostics import LooResult, fit_generalized_pareto, loo_ic, psis_weights
from .errors import (DegenerateChainWarning, DivergenceWarning, LayoutMismatchError,
                     ModelError, ParetoKWarning, ValidationError)
from .ingest import (AnalysisDataset, ComorbidityMap, Icd9Code, apply_comorbidity_index,
                     build_hierarchy, filter_by_prevalence, parse_claims)
from .model import FAMILIES, PropensityModel
from .sampler import (PosteriorDraws, SamplerConfig, effective_sample_size, run_chains,
                      split_rhat)
from .synth import ScenarioSpec, generate_cohort

__version__ = "0.1.0"
