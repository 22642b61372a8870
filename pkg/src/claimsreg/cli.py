"""Command-line pipeline: simulate, fit, estimate, balance, loo, report.

Each command writes machine-readable JSON/CSV into ``--out``. ``fit`` also
stores its configuration there, so later commands pointed at the same
directory need no data flags.

Exit status: 0 success, 2 invalid input, 3 fit finished but did not converge
(max split-R-hat >= 1.1), 4 file system error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import causal, diagnostics, ingest, synth
from .errors import ModelError, ValidationError
from .model import PropensityModel
from .sampler import PosteriorDraws, SamplerConfig, run_chains

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4
RHAT_LIMIT = 1.1

PRIORS = {
    "t5-3digit": "t5_3digit",
    "t5-4digit": "t5_4digit",
    "horseshoe": "horseshoe_4digit",
    "hierarchical": "hierarchical",
    "elix-ind": "comorbidity_indicator",
    "elix-cont": "comorbidity_continuous",
    "unadjusted": "unadjusted",
}

SCENARIOS = {
    "desk": synth.ScenarioSpec.desk,
    "large": synth.ScenarioSpec.large_cohort,
    "sparse": synth.ScenarioSpec.sparse_truth,
}

CONFIG_FILE = "fit_config.json"


@dataclass
class RunConfig:
    claims: str
    registry: str
    out: str
    prior: str = "t5-4digit"
    map: str | None = None
    threshold: int = 10
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    seed: int = 0
    threads: int = 1
    outcomes: list | None = None

    def __post_init__(self):
        if self.prior not in PRIORS:
            raise ValidationError(f"unknown prior {self.prior!r}; choose from {sorted(PRIORS)}")
        if self.prior.startswith("elix") and not self.map:
            raise ValidationError(f"--prior {self.prior} needs a comorbidity --map")
        if self.threshold < 1:
            raise ValidationError("--threshold must be >= 1")

    @property
    def family(self) -> str:
        return PRIORS[self.prior]

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(chains=self.chains, warmup=self.warmup, samples=self.samples,
                             seed=self.seed, threads=self.threads)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def load_datasets(cfg: RunConfig):
    """(model dataset, balance dataset).

    Balance is always assessed on baseline covariates plus the retained
    4-digit codes, so every prior family is judged on the same columns.
    """
    raw = ingest.parse_claims(cfg.claims, cfg.registry)
    filtered = ingest.filter_by_prevalence(raw, cfg.threshold)
    if cfg.outcomes:
        missing = set(cfg.outcomes) - set(raw.outcome_names)
        if missing:
            raise ValidationError(f"outcomes not in registry: {sorted(missing)}")
    if cfg.prior.startswith("elix"):
        cmap = ingest.ComorbidityMap.from_csv(cfg.map)
        mode = "indicator" if cfg.prior == "elix-ind" else "continuous"
        return ingest.apply_comorbidity_index(raw, cmap, mode, cfg.threshold), filtered
    return filtered, filtered


def build_model(cfg: RunConfig):
    data, balance_data = load_datasets(cfg)
    return PropensityModel(data, cfg.family), balance_data


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_draws(cfg: RunConfig, model, path=None) -> PosteriorDraws:
    path = Path(path) if path else cfg.out_dir / "draws.csv"
    return PosteriorDraws.from_csv(path, expected_names=model.names)


# -- commands -----------------------------------------------------------------

def cmd_simulate(scenario: str, out, seed: int = 0, n: int | None = None) -> Path:
    """Write claims.csv, registry.csv, truth.json and comorbidity_map.csv."""
    kw = {"n": n} if n else {}
    spec = SCENARIOS[scenario](seed=seed, **kw)
    cohort = synth.generate_cohort(spec)
    out = synth.write_cohort(cohort, out)
    cmap = synth.synthetic_comorbidity_map(cohort.dataset, seed=seed)
    synth.write_comorbidity_map(cmap, out / "comorbidity_map.csv")
    return out


def _write_coefficients(model, draws, path):
    """Posterior summaries on the original covariate scale."""
    coef = model.original_scale_coefficients(draws.flat())
    cols = [("beta0", coef["beta0"])]
    cols += [(f"beta_B[{b}]", coef["beta_B"][:, j]) for j, b in enumerate(model.B_names)]
    cols += [(f"beta_C[{c}]", coef["beta_C"][:, j]) for j, c in enumerate(model.C_names)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "mean", "q025", "q975"])
        for name, v in cols:
            w.writerow([name, float(v.mean()), *np.quantile(v, [0.025, 0.975]).tolist()])


def cmd_fit(cfg: RunConfig) -> dict:
    """Fit the propensity model; write draws.csv, fit_report.json, fit_config.json."""
    model, _ = build_model(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    draws = run_chains(model, cfg.sampler())
    draws.to_csv(out / "draws.csv")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", diagnostics.ParetoKWarning)
        loo = diagnostics.loo_ic(model.pointwise_log_lik(draws.flat()))
    summ = draws.summary()
    report = {
        "prior": cfg.prior,
        "max_rhat": summ["max_rhat"],
        "min_ess": summ["min_ess"],
        "divergences": summ["divergences"],
        "loo_ic": loo.loo_ic,
        "loo_se": loo.loo_ic_se,
        "n_claims_vars": model.n_claims_vars,
        "converged": bool(summ["max_rhat"] < RHAT_LIMIT),
    }
    _write_json(out / "fit_report.json", report)
    _write_json(out / CONFIG_FILE, asdict(cfg))
    _write_coefficients(model, draws, out / "coefficients.csv")
    return report


def cmd_estimate(cfg: RunConfig, draws_path=None) -> list:
    """Risk differences (percent scale) per outcome; writes estimate.json."""
    model, _ = build_model(cfg)
    draws = _load_draws(cfg, model, draws_path)
    pi = causal.propensity_draws(model, draws)
    positivity = causal.positivity_count(pi)
    data = model.source
    rows = []
    for outcome in cfg.outcomes or data.outcome_names:
        summ = causal.draw_causal(pi, data, outcome, cfg.seed)
        rec = summ.to_json(outcome)
        rec["cell"] = summ.table_cell()
        rec["positivity_violations"] = positivity
        rows.append(rec)
    _write_json(cfg.out_dir / "estimate.json", rows)
    return rows


def cmd_balance(cfg: RunConfig, draws_path=None) -> causal.BalanceReport:
    model, balance_data = build_model(cfg)
    draws = _load_draws(cfg, model, draws_path)
    report = causal.standardized_differences(causal.propensity_draws(model, draws), balance_data)
    report.to_csv(cfg.out_dir / "balance.csv")
    return report


def cmd_loo(cfg: RunConfig, draws_path=None) -> dict:
    model, _ = build_model(cfg)
    draws = _load_draws(cfg, model, draws_path)
    loo = diagnostics.loo_ic(model.pointwise_log_lik(draws.flat()))
    rec = {"elpd_loo": loo.elpd_loo, "loo_ic": loo.loo_ic, "se": loo.se, "n_bad_k": loo.n_bad_k}
    _write_json(cfg.out_dir / "loo.json", rec)
    return rec


def _balance_counts(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return (sum(int(r["flag_mean"]) for r in rows),
            sum(int(r["flag_interval"]) for r in rows))


def _fit_dirs(root: Path):
    dirs = [root] if (root / "fit_report.json").exists() else []
    dirs += sorted(p.parent for p in root.glob("*/fit_report.json"))
    return dirs


def cmd_report(root) -> str:
    """Markdown covariate-balance/LOO table plus risk-difference table; writes report.md."""
    root = Path(root)
    dirs = _fit_dirs(root)
    if not dirs:
        raise ValidationError(f"no fit_report.json under {root}")
    lines = ["| Model | Claims vars | LOO-IC (SE) | Means ∉ (-10,10) | CIs ∉ (-10,10) |",
             "|---|---|---|---|---|"]
    effects = []
    for d in dirs:
        fit = _read_json(d / "fit_report.json")
        name = fit.get("prior", d.name)
        means = cis = "-"
        if (d / "balance.csv").exists():
            means, cis = _balance_counts(d / "balance.csv")
        lines.append(f"| {name} | {fit['n_claims_vars']} | "
                     f"{fit['loo_ic']:.1f} ({fit['loo_se']:.1f}) | {means} | {cis} |")
        if (d / "estimate.json").exists():
            effects.append((name, _read_json(d / "estimate.json")))
    if effects:
        outcomes = [r["outcome"] for r in effects[0][1]]
        lines += ["", "| Model | " + " | ".join(outcomes) + " |",
                  "|---|" + "---|" * len(outcomes)]
        for name, rows in effects:
            cells = {r["outcome"]: r["cell"] for r in rows}
            lines.append(f"| {name} | " + " | ".join(cells.get(o, "-") for o in outcomes) + " |")
    text = "\n".join(lines) + "\n"
    with open(root / "report.md", "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


# -- argument handling --------------------------------------------------------

def _add_run_flags(p, data_required):
    p.add_argument("--claims", required=data_required)
    p.add_argument("--registry", required=data_required)
    p.add_argument("--map", help="comorbidity map CSV: prefix,category[,weight]")
    p.add_argument("--prior", choices=sorted(PRIORS))
    p.add_argument("--threshold", type=int, help="minimum subjects per code (default 10)")
    p.add_argument("--chains", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--outcome", action="append", dest="outcomes",
                   help="outcome name (repeatable; default all)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="claimsreg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic cohort")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="desk")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit a propensity model")
    _add_run_flags(p, data_required=True)
    for name in ("estimate", "balance", "loo"):
        p = sub.add_parser(name, help=f"{name} from a fitted model")
        _add_run_flags(p, data_required=False)
        p.add_argument("--draws", help="draws CSV (default OUT/draws.csv)")

    p = sub.add_parser("report", help="render tables from fitted model directories")
    p.add_argument("--out", required=True, help="directory holding one subdirectory per model")
    return parser


def config_from_args(args) -> RunConfig:
    """Flags override values saved by an earlier ``fit`` in the same --out."""
    saved = {}
    path = Path(args.out) / CONFIG_FILE
    if args.command != "fit" and path.exists():
        saved = _read_json(path)
    values = dict(saved)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    for key in ("claims", "registry"):
        if not values.get(key):
            raise ValidationError(f"--{key} is required (no saved fit configuration in {args.out})")
    return RunConfig(**values)


def _echo(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        out = cmd_simulate(args.scenario, args.out, args.seed, args.n)
        print(out)
        return EXIT_OK
    if args.command == "report":
        print(cmd_report(args.out), end="")
        return EXIT_OK

    cfg = config_from_args(args)
    if args.command == "fit":
        report = cmd_fit(cfg)
        _echo(report)
        if not report["converged"]:
            print(f"max split-R-hat {report['max_rhat']:.3f} >= {RHAT_LIMIT}", file=sys.stderr)
            return EXIT_CONVERGENCE
        return EXIT_OK
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if args.command == "estimate":
        rows = cmd_estimate(cfg, args.draws)
        for r in rows:
            print(f"{r['outcome']}: {r['cell']}")
    elif args.command == "balance":
        rep = cmd_balance(cfg, args.draws)
        print(f"{len(rep.names)} covariates; means outside (-10,10): {rep.n_mean_outside}; "
              f"intervals outside: {rep.n_interval_outside}")
    elif args.command == "loo":
        _echo(cmd_loo(cfg, args.draws))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ValidationError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
