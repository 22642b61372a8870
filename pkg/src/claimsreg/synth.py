"""Synthetic claims cohorts with known treatment and outcome mechanisms.

Codes come in three-character groups. Every subject carries a latent
severity per group, and member-code probabilities rise with it, so codes of a
group co-occur. A subset of groups are confounders: their codes push towards
the comparator treatment and towards the adverse outcome, mirroring sicker
patients receiving the older device. The true effect of each endpoint is
computed by averaging potential-outcome probabilities over the generated
subjects, never assumed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from .errors import ValidationError
from .ingest import AnalysisDataset, write_dataset

MAX_REGENERATIONS = 10


@dataclass(frozen=True)
class EndpointSpec:
    """A binary outcome.

    risk_difference
        Target average effect of treatment on the probability scale; 0 gives
        a falsifiability endpoint with no effect for any subject.
    base_rate
        Outcome probability at zero covariates, comparator arm.
    confounding
        Multiplier on the outcome coefficients of confounding codes and
        covariates.
    """

    name: str
    risk_difference: float = 0.0
    base_rate: float = 0.1
    confounding: float = 1.0


@dataclass(frozen=True)
class ScenarioSpec:
    n: int = 2000
    n_continuous: int = 2
    n_binary: int = 2
    n_groups: int = 15
    group_size: tuple = (3, 3)
    n_singletons: int = 15
    prevalence: tuple = (0.03, 0.2)
    group_loading: float = 1.0
    treatment_intercept: float = 0.4
    confounder_fraction: float = 0.4
    treatment_only_fraction: float = 0.2
    outcome_only_fraction: float = 0.2
    treatment_effect_scale: float = 0.5
    outcome_effect_scale: float = 0.8
    member_sd: float = 0.25
    baseline_treatment_scale: float = 0.3
    baseline_outcome_scale: float = 0.3
    endpoints: tuple = (EndpointSpec("early", 0.0, 0.1), EndpointSpec("late", -0.05, 0.15))
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.prevalence
        if not 0 < lo <= hi < 1:
            raise ValidationError("code prevalences must lie in (0, 1)")
        if self.n < 2:
            raise ValidationError("need at least two subjects")
        gmin, gmax = self.group_size
        if not 2 <= gmin <= gmax <= 10:
            raise ValidationError("group sizes must lie in [2, 10]")
        fracs = (self.confounder_fraction + self.treatment_only_fraction
                 + self.outcome_only_fraction)
        if fracs > 1 + 1e-12:
            raise ValidationError("group role fractions exceed 1")
        if len({e.name for e in self.endpoints}) != len(self.endpoints):
            raise ValidationError("endpoint names must be unique")

    @property
    def n_codes_target(self) -> int:
        gmin, gmax = self.group_size
        return int(round(self.n_groups * (gmin + gmax) / 2)) + self.n_singletons

    @classmethod
    def desk(cls, seed=0, **kw) -> "ScenarioSpec":
        """n = 2000 and 60 codes: 15 groups of three plus 15 singletons."""
        return cls(seed=seed, **kw)

    @classmethod
    def large_cohort(cls, seed=0, **kw) -> "ScenarioSpec":
        """n = 8000 and about 300 codes: 60 prefix groups of 2-5 plus 90 singletons.

        Rare codes and small groups, the regime where the claims prior matters.
        """
        base = dict(n=8000, n_continuous=4, n_binary=6, n_groups=60, group_size=(2, 5),
                    n_singletons=90, prevalence=(0.004, 0.08), confounder_fraction=0.2,
                    treatment_only_fraction=0.15, outcome_only_fraction=0.15)
        base.update(kw)
        return cls(seed=seed, **base)

    @classmethod
    def sparse_truth(cls, seed=0, **kw) -> "ScenarioSpec":
        """Many null codes, few strong confounding groups."""
        base = dict(n=1000, n_groups=20, group_size=(3, 5), n_singletons=20,
                    prevalence=(0.02, 0.12), confounder_fraction=0.15,
                    treatment_only_fraction=0.0, outcome_only_fraction=0.1,
                    treatment_effect_scale=1.2, outcome_effect_scale=1.0, member_sd=0.15)
        base.update(kw)
        return cls(seed=seed, **base)


@dataclass
class CohortTruth:
    propensity: np.ndarray
    p1: dict
    p0: dict
    risk_difference: dict
    treatment_coef: dict
    outcome_coef: dict
    code_roles: dict

    def to_json(self) -> dict:
        return {
            "risk_difference": {k: float(v) for k, v in self.risk_difference.items()},
            "treatment_coef": self.treatment_coef,
            "outcome_coef": self.outcome_coef,
            "code_roles": self.code_roles,
            "mean_propensity": float(np.mean(self.propensity)),
        }


@dataclass
class Cohort:
    dataset: AnalysisDataset
    truth: CohortTruth
    spec: ScenarioSpec = field(repr=False, default=None)


def _code_names(spec, rng):
    n_pref = spec.n_groups + spec.n_singletons
    pool = [f"{k:03d}" for k in range(1, 1000)] + [f"V{k:02d}" for k in range(1, 100)]
    prefixes = [pool[i] for i in sorted(rng.choice(len(pool), n_pref, replace=False))]
    rng.shuffle(prefixes)
    gmin, gmax = spec.group_size
    groups = []
    for prefix in prefixes[:spec.n_groups]:
        size = int(rng.integers(gmin, gmax + 1))
        digits = sorted(rng.choice(10, size, replace=False))
        groups.append([f"{prefix}{d}" for d in digits])
    singles = [f"{prefix}{int(rng.integers(10))}" for prefix in prefixes[spec.n_groups:]]
    return groups, singles


def _draw_once(spec: ScenarioSpec, rng):
    n = spec.n
    groups, singles = _code_names(spec, rng)

    B_cont = 50.0 + 10.0 * rng.standard_normal((n, spec.n_continuous))
    B_bin = (rng.uniform(size=(n, spec.n_binary)) < 0.3).astype(float)
    B = np.column_stack([B_cont, B_bin])
    B_names = ([f"cont{k + 1}" for k in range(spec.n_continuous)]
               + [f"bin{k + 1}" for k in range(spec.n_binary)])
    B_std = (B - B.mean(axis=0)) / np.where(B.std(axis=0) > 0, B.std(axis=0), 1.0)

    lo, hi = spec.prevalence
    columns, names, t_coef, y_coef, roles = [], [], [], [], []

    def prevalences(k):
        return np.exp(rng.uniform(np.log(lo), np.log(hi), k))

    role_names = np.array(["null"] * spec.n_groups, dtype=object)
    n_conf = int(round(spec.confounder_fraction * spec.n_groups))
    n_tonly = int(round(spec.treatment_only_fraction * spec.n_groups))
    n_yonly = int(round(spec.outcome_only_fraction * spec.n_groups))
    order = rng.permutation(spec.n_groups)
    role_names[order[:n_conf]] = "confounder"
    role_names[order[n_conf:n_conf + n_tonly]] = "treatment"
    role_names[order[n_conf + n_tonly:n_conf + n_tonly + n_yonly]] = "outcome"

    for g, members in enumerate(groups):
        factor = rng.standard_normal(n)
        prev = prevalences(len(members))
        severity = abs(rng.standard_normal()) + 0.5
        role = role_names[g]
        for code, p in zip(members, prev):
            prob = expit(logit(p) + spec.group_loading * factor)
            columns.append(rng.uniform(size=n) < prob)
            names.append(code)
            offset = spec.member_sd * rng.standard_normal()
            t = -spec.treatment_effect_scale * (severity + offset) \
                if role in ("confounder", "treatment") else 0.0
            y = spec.outcome_effect_scale * (severity + offset) \
                if role in ("confounder", "outcome") else 0.0
            t_coef.append(t)
            y_coef.append(y)
            roles.append(str(role))
    for code, p in zip(singles, prevalences(len(singles))):
        columns.append(rng.uniform(size=n) < p)
        names.append(code)
        r = rng.uniform()
        sev = abs(rng.standard_normal()) + 0.5
        if r < spec.confounder_fraction:
            role, t, y = "confounder", -spec.treatment_effect_scale * sev, spec.outcome_effect_scale * sev
        elif r < spec.confounder_fraction + spec.treatment_only_fraction:
            role, t, y = "treatment", -spec.treatment_effect_scale * sev, 0.0
        elif r < spec.confounder_fraction + spec.treatment_only_fraction + spec.outcome_only_fraction:
            role, t, y = "outcome", 0.0, spec.outcome_effect_scale * sev
        else:
            role, t, y = "null", 0.0, 0.0
        t_coef.append(t)
        y_coef.append(y)
        roles.append(role)

    order = np.argsort(names)
    names = [names[i] for i in order]
    C = np.column_stack(columns).astype(np.int8)[:, order] if columns else np.zeros((n, 0), np.int8)
    t_coef = np.array(t_coef)[order]
    y_coef = np.array(y_coef)[order]
    roles = [roles[i] for i in order]

    bt = spec.baseline_treatment_scale * rng.standard_normal(B.shape[1])
    by = spec.baseline_outcome_scale * np.abs(rng.standard_normal(B.shape[1]))
    by *= -np.sign(bt + 1e-12)
    # centred so the intercept fixes the typical treatment rate
    treat_lin = B_std @ bt + C @ t_coef
    treat_eta = spec.treatment_intercept + treat_lin - treat_lin.mean()
    propensity = expit(treat_eta)
    X = (rng.uniform(size=n) < propensity).astype(np.int64)

    Y, p1s, p0s, rds, ycoefs = {}, {}, {}, {}, {}
    for ep in spec.endpoints:
        out_lin = B_std @ by + C @ y_coef
        base = logit(ep.base_rate) + ep.confounding * (out_lin - out_lin.mean())
        if ep.risk_difference == 0.0:
            effect = 0.0
        else:
            def gap(th):
                return np.mean(expit(base + th) - expit(base)) - ep.risk_difference
            effect = brentq(gap, -20.0, 20.0, xtol=1e-14)
        p1 = expit(base + effect)
        p0 = expit(base)
        Y[ep.name] = (rng.uniform(size=n) < np.where(X == 1, p1, p0)).astype(np.int64)
        p1s[ep.name], p0s[ep.name] = p1, p0
        rds[ep.name] = float(np.mean(p1 - p0))
        ycoefs[ep.name] = {"treatment": float(effect), "confounding": ep.confounding}

    width = len(str(n))
    ids = [f"S{i:0{width}d}" for i in range(n)]
    dataset = AnalysisDataset(ids, X, Y, B, C, B_names, names)
    truth = CohortTruth(
        propensity=propensity, p1=p1s, p0=p0s, risk_difference=rds,
        treatment_coef={"baseline": bt.tolist(), "claims": dict(zip(names, t_coef.tolist())),
                        "intercept": spec.treatment_intercept},
        outcome_coef={"baseline": by.tolist(), "claims": dict(zip(names, y_coef.tolist())),
                      "endpoints": ycoefs},
        code_roles=dict(zip(names, roles)),
    )
    return dataset, truth


def generate_cohort(spec: ScenarioSpec, out_dir=None) -> Cohort:
    """Simulate a cohort; optionally write claims/registry CSVs and truth.json.

    A draw in which one treatment arm is empty is regenerated with a fresh
    stream (up to 10 times).
    """
    ss = np.random.SeedSequence(spec.seed)
    for attempt, child in enumerate(ss.spawn(MAX_REGENERATIONS)):
        rng = np.random.default_rng(child)
        dataset, truth = _draw_once(spec, rng)
        if 0 < dataset.X.sum() < dataset.n:
            cohort = Cohort(dataset, truth, spec)
            if out_dir is not None:
                write_cohort(cohort, out_dir)
            return cohort
    raise ValidationError(
        f"scenario produced an empty treatment group in {MAX_REGENERATIONS} attempts")


def write_cohort(cohort: Cohort, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(cohort.dataset, out / "claims.csv", out / "registry.csv")
    payload = cohort.truth.to_json()
    if cohort.spec is not None:
        payload["scenario"] = _spec_json(cohort.spec)
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def _spec_json(spec):
    d = asdict(spec)
    d["endpoints"] = [asdict(e) for e in spec.endpoints]
    return d


def true_effect_oracle(truth: CohortTruth, endpoint: str) -> float:
    """Average of p(Y=1 | treated) - p(Y=1 | comparator) over the cohort."""
    if endpoint not in truth.p1:
        raise ValidationError(f"unknown endpoint {endpoint!r}")
    return float(np.mean(truth.p1[endpoint] - truth.p0[endpoint]))


def synthetic_comorbidity_map(dataset: AnalysisDataset, n_categories: int = 8, seed=0):
    """Assign each three-character prefix to one of `n_categories` categories.

    Returns a `ComorbidityMap` with integer weights in [-3, 9], for exercising
    the comorbidity-index families on synthetic cohorts.
    """
    from .ingest import ComorbidityMap

    rng = np.random.default_rng(seed)
    prefixes = sorted({c[:3] for c in dataset.C_names})
    cats = [f"CAT{k + 1:02d}" for k in range(n_categories)]
    entries = tuple((p, cats[int(rng.integers(n_categories))]) for p in prefixes)
    weights = {c: int(rng.integers(-3, 10)) for c in cats}
    return ComorbidityMap(entries, weights)


def write_comorbidity_map(cmap, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("prefix,category,weight\n")
        for prefix, cat in cmap.entries:
            fh.write(f"{prefix},{cat},{cmap.category_weights[cat]}\n")
