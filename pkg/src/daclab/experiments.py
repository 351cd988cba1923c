"""Seeded Monte Carlo runners for the worked examples and CSV/JSON emission.

Random streams are derived from ``SeedSequence([seed, cell, trial])``; designs
that are held fixed across trials use reserved keys. Records are always
returned sorted by (cell, trial, method order), so the output does not depend
on the number of worker threads.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, estimators, theory
from .augment import AugmentationSpec, build_augmented, d_aug_of, d_prime_details
from .datagen import gen_domain, gen_linear, gen_logistic, preset, sigmoid
from .matkit import InvalidInputError

DESIGN_KEY = 1_000_003
TEST_KEY = 1_000_033
TRAIN_KEY = 1_000_037

SWEEP_KEYS = {
    "linear": {"cells", "d_c1", "d_e1", "alpha"},
    "logistic": {"d_aug", "alpha"},
    "misspec": {"d_aug", "lambda", "alpha"},
    "domain": {"sigma_t"},
    "expansion": set(),
}
RUNNER_OF_PRESET = {
    "example_4_1": "linear",
    "example_4_2": "logistic",
    "example_6": "misspec",
    "example_C1": "domain",
}


@dataclass
class ExperimentConfig:
    preset: str = "example_4_1"
    trials: int = 100
    seed: int = 0
    methods: list = field(default_factory=list)
    sweep: dict = field(default_factory=dict)
    fixed_design: bool = True
    output_path: str = ""
    overrides: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 1:
            raise InvalidInputError("trials must be a positive integer")
        kind = RUNNER_OF_PRESET.get(self.preset, "expansion" if self.preset == "expansion" else None)
        if kind is None:
            raise InvalidInputError(f"unknown preset {self.preset!r}")
        unknown = set(self.sweep) - SWEEP_KEYS[kind]
        if unknown:
            raise InvalidInputError(f"sweep parameters {sorted(unknown)} not recognized for {self.preset}")

    @property
    def runner(self) -> str:
        return RUNNER_OF_PRESET.get(self.preset, "expansion")

    def get(self, key, default=None):
        return self.overrides.get(key, default)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = {k: v for k, v in obj.items() if k not in known}
        base = {k: v for k, v in obj.items() if k in known}
        base["overrides"] = {**base.get("overrides", {}), **extra}
        return cls(**base)


@dataclass
class TrialRecord:
    trial: int
    method: str
    params: dict
    excess_risk: float
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.excess_risk < -1e-12:
            raise InvalidInputError(f"negative excess risk {self.excess_risk}")
        self.excess_risk = max(float(self.excess_risk), 0.0)

    def to_dict(self) -> dict:
        return {"trial": self.trial, "method": self.method, "params": self.params,
                "excess_risk": self.excess_risk, "aux": self.aux}

    @classmethod
    def from_dict(cls, obj: dict) -> "TrialRecord":
        return cls(int(obj["trial"]), obj["method"], dict(obj["params"]),
                   float(obj["excess_risk"]), dict(obj.get("aux", {})))


class RunResult(list):
    """List of TrialRecords plus per-cell theory reports and run metadata."""

    def __init__(self, records=(), theory_reports=None, meta=None):
        super().__init__(records)
        self.theory = theory_reports or {}
        self.meta = meta or {}


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def design_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def _map_trials(fn, tasks, workers: int):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(fn, tasks))
    else:
        chunks = [fn(t) for t in tasks]
    return [rec for chunk in chunks for rec in chunk]


def summarize(records, by=("method",)) -> dict:
    """Group records and return {key: (mean, std_error, count)} of excess_risk."""
    groups = {}
    for r in records:
        key = tuple(r.method if k == "method" else r.params.get(k) for k in by)
        groups.setdefault(key, []).append(r.excess_risk)
    out = {}
    for key, vals in groups.items():
        v = np.asarray(vals)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
        out[key] = (float(v.mean()), se, int(v.size))
    return out


def aux_summary(records, field_name, by=("method",)) -> dict:
    groups = {}
    for r in records:
        key = tuple(r.method if k == "method" else r.params.get(k) for k in by)
        groups.setdefault(key, []).append(r.aux[field_name])
    return {k: (float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v))), len(v))
            for k, v in groups.items()}


# Example 4.1: fixed-design linear regression --------------------------------------

def run_linear_sweep(cfg: ExperimentConfig) -> RunResult:
    p = preset(cfg.preset, cfg.seed)
    n = cfg.get("N", p.N)
    sigma = cfg.get("sigma", p.sigma)
    alpha = cfg.sweep.get("alpha", [cfg.get("alpha", p.alpha)])
    cells = cfg.sweep.get("cells") or cfg.get("cells") or p.cells
    if "d_c1" in cfg.sweep or "d_e1" in cfg.sweep:
        cells = [{"d_c1": c1, "d_e1": e1} for c1 in cfg.sweep.get("d_c1", [5])
                 for e1 in cfg.sweep.get("d_e1", [0])]
    methods = cfg.methods or ["dac_hard", "da_erm"]
    model = p.model
    theta = model.theta_star
    grid = [(dict(c), a) for c in cells for a in alpha]

    # one design shared by all cells
    x, _ = gen_linear(model, n, substream(cfg.seed, DESIGN_KEY))
    prepared = []
    reports = {}
    for ci, (cell, a) in enumerate(grid):
        spec = AugmentationSpec.block_scale(cell["d_c1"], cell["d_e1"], 2.0, -1.0, alpha=a)
        aug = build_augmented(x, np.zeros(n), spec, substream(cfg.seed, ci, DESIGN_KEY))
        params = {"d_c1": cell["d_c1"], "d_e1": cell["d_e1"], "alpha": a, "d_aug": d_aug_of(aug)}
        dp = d_prime_details(aug)
        params["d_prime"] = round(dp.value, 12)
        rep = theory.theory_report(aug, theta, sigma)
        reports[ci] = rep
        prepared.append((ci, aug, params, design_hash(aug.x, aug.x_aug_stacked)))

    def one(task):
        ci, t = task
        _, aug, params, h = prepared[ci]
        rng = substream(cfg.seed, ci, t)
        y = aug.x @ theta + sigma * rng.standard_normal(n)
        data = aug.with_labels(y)
        out = []
        for m in methods:
            est = _fit_linear(data, m, cfg)
            risk = estimators.excess_risk_fixed_design(est.theta_hat, theta, data, "augmented")
            out.append(TrialRecord(t, m, dict(params), risk, {"design_hash": h}))
        return out

    tasks = [(ci, t) for ci in range(len(prepared)) for t in range(cfg.trials)]
    records = _map_trials(one, tasks, cfg.workers)
    return RunResult(records, reports, {"cells": [pp[2] for pp in prepared], "sigma": sigma, "n": n})


def _fit_linear(aug, method, cfg, lam=None):
    if method == "ols":
        return estimators.ols(aug.x, aug.y)
    if method == "da_erm":
        return estimators.da_erm_ls(aug)
    if method == "dac_hard":
        return estimators.dac_hard_ls(aug)
    if method == "dac_soft":
        return estimators.dac_soft_ls(aug, cfg.get("lambda", 1.0) if lam is None else lam)
    raise InvalidInputError(f"unknown linear method {method!r}")


# Example 4.2: logistic regression, random design ------------------------------------

def conditional_error(theta, x_test, theta_star) -> float:
    """Expected 0-1 error of sign(theta^T x) given the test inputs."""
    p = sigmoid(x_test @ theta_star)
    pred = (x_test @ theta) > 0
    return float(np.mean(np.where(pred, 1.0 - p, p)))


def run_logistic_sweep(cfg: ExperimentConfig) -> RunResult:
    """Both fits per (d_aug, alpha) cell on fresh data every trial.

    The training sample of trial t is shared by all cells (common random
    numbers), augmentations are drawn per cell, and one held-out set is used for
    every fit. ``excess_risk`` is the expected test error given the held-out
    inputs minus the Bayes error on them; ``aux["test_error"]`` is the observed
    error rate on sampled held-out labels.
    """
    p = preset(cfg.preset, cfg.seed)
    n = cfg.get("N", p.N)
    d_augs = cfg.sweep.get("d_aug", cfg.get("d_augs", p.d_augs))
    alphas = cfg.sweep.get("alpha", cfg.get("alphas", p.alphas))
    methods = cfg.methods or ["dac_hard", "da_erm"]
    model = p.model
    c0 = cfg.get("c0", p.c0)
    test_size = cfg.get("test_size", p.test_size)
    max_iters = cfg.get("max_iters", 2000)
    grad_tol = cfg.get("grad_tol", 1e-6)

    x_test, y_test = gen_logistic(model, test_size, substream(cfg.seed, TEST_KEY))
    bayes = float(np.mean(np.minimum(sigmoid(x_test @ model.theta_star),
                                     1 - sigmoid(x_test @ model.theta_star))))
    grid = [(da, a) for da in d_augs for a in alphas]

    def one(task):
        ci, t = task
        d_aug, a = grid[ci]
        x, y = gen_logistic(model, n, substream(cfg.seed, TRAIN_KEY, t))
        spec = AugmentationSpec.coordinate_resample(d_aug, alpha=a)
        aug = build_augmented(x, y, spec, substream(cfg.seed, ci, t))
        out = []
        for m in methods:
            feats = aug.x_aug_stacked if m == "da_erm" else aug.x
            opt = estimators.OptimizerConfig(max_iters, estimators.logistic_step_size(feats), grad_tol, cfg.seed)
            est = estimators.logistic_fit(aug, m, c0, opt)
            err = conditional_error(est.theta_hat, x_test, model.theta_star)
            test_err = float(np.mean(((x_test @ est.theta_hat) > 0) != (y_test > 0.5)))
            out.append(TrialRecord(t, m, {"d_aug": d_aug, "alpha": a}, max(err - bayes, 0.0),
                                   {"test_error": test_err, "expected_error": err,
                                    "converged": bool(est.diagnostics["converged"]),
                                    "iterations": int(est.diagnostics["iterations"])}))
        return out

    tasks = [(ci, t) for ci in range(len(grid)) for t in range(cfg.trials)]
    records = _map_trials(one, tasks, cfg.workers)
    return RunResult(records, {}, {"bayes_error": bayes, "test_size": test_size, "n": n, "c0": c0})


# Example 6: misspecified augmentations and soft consistency ---------------------------

def run_misspec_sweep(cfg: ExperimentConfig) -> RunResult:
    """Soft DAC over a lambda grid (plus the closed-form lambda*), hard DAC and DA-ERM.

    Fixed design per d_aug cell; excess risk on the original design.
    """
    p = preset(cfg.preset, cfg.seed)
    n = cfg.get("N", p.N)
    sigma = cfg.get("sigma", p.sigma)
    noise_std = cfg.get("noise_std", p.noise_std)
    d_augs = cfg.sweep.get("d_aug", cfg.get("d_augs", p.d_augs))
    alphas = cfg.sweep.get("alpha", [cfg.get("alpha", p.alpha)])
    lambdas = list(cfg.sweep.get("lambda", cfg.get("lambda_grid", p.lambda_grid)))
    methods = cfg.methods or ["dac_soft", "dac_hard", "da_erm"]
    model = p.model
    theta = model.theta_star

    x, _ = gen_linear(model, n, substream(cfg.seed, DESIGN_KEY))
    grid = [(da, a) for da in d_augs for a in alphas]
    prepared = []
    reports = {}
    for ci, (d_aug, a) in enumerate(grid):
        spec = AugmentationSpec.gaussian_jitter(d_aug, noise_std, alpha=a)
        aug = build_augmented(x, np.zeros(n), spec, substream(cfg.seed, ci, DESIGN_KEY))
        lam_star = theory.optimal_lambda(aug, theta, sigma)
        reports[ci] = theory.theory_report(aug, theta, sigma)
        fits = []
        if "dac_soft" in methods:
            fits += [("dac_soft", lam, False) for lam in lambdas]
            fits.append(("dac_soft", lam_star, True))
        fits += [(m, None, False) for m in methods if m != "dac_soft"]
        prepared.append((aug, {"d_aug": d_augs[ci // len(alphas)], "alpha": a}, lam_star, fits,
                         design_hash(aug.x, aug.x_aug_stacked)))

    def one(task):
        ci, t = task
        aug, params, lam_star, fits, h = prepared[ci]
        rng = substream(cfg.seed, ci, t)
        data = aug.with_labels(aug.x @ theta + sigma * rng.standard_normal(n))
        out = []
        for m, lam, is_star in fits:
            est = _fit_linear(data, m, cfg, lam)
            risk = estimators.excess_risk_fixed_design(est.theta_hat, theta, data, "original")
            prm = dict(params)
            aux = {"design_hash": h, "lambda_star": lam_star}
            if m == "dac_soft":
                prm["lambda"] = lam
                aux["is_lambda_star"] = is_star
            aux["constraint_residual"] = float(np.linalg.norm(data.delta @ est.theta_hat))
            out.append(TrialRecord(t, m if not is_star else "dac_soft_star", prm, risk, aux))
        return out

    tasks = [(ci, t) for ci in range(len(prepared)) for t in range(cfg.trials)]
    records = _map_trials(one, tasks, cfg.workers)
    return RunResult(records, reports, {"lambda_star": {ci: pp[2] for ci, pp in enumerate(prepared)},
                                        "sigma": sigma, "n": n, "noise_std": noise_std})


# Example C.1: domain adaptation --------------------------------------------------------

def run_domain_adaptation(cfg: ExperimentConfig) -> RunResult:
    """Source-trained hard DAC and DA-ERM evaluated on targets with several sigma_t.

    Training never sees the target, so trial t uses the same source sample and
    fits for every sigma_t; only the target covariance changes.
    """
    p = preset(cfg.preset, cfg.seed)
    spec = p.model
    n = cfg.get("N", p.N)
    sigma_ts = cfg.sweep.get("sigma_t", cfg.get("sigma_ts", p.sigma_ts))
    methods = cfg.methods or ["dac_hard", "da_erm"]
    aug_spec = p.augmentation

    def one(t):
        x, y = gen_domain(spec, "source", n, substream(cfg.seed, TRAIN_KEY, t))
        aug = build_augmented(x, y, aug_spec, substream(cfg.seed, 0, t))
        eer = theory.eer_e(aug, spec, 100, substream(cfg.seed, 1, t))
        lb = theory.eer_e_lower_bound(x, spec, p.nu1, p.nu2)
        fits = {m: _fit_linear(aug, m, cfg).theta_hat for m in methods}
        out = []
        for st in sigma_ts:
            target = spec.with_sigma_t(st)
            for m in methods:
                q = theory.domain_target_quantities(target, fits[m])
                out.append(TrialRecord(t, m, {"sigma_t": st}, q.target_excess,
                                       {"eer_e": eer.estimate, "eer_e_exact": eer.exact,
                                        "eer_e_lower_bound": lb}))
        return out

    records = _map_trials(one, range(cfg.trials), cfg.workers)
    records.sort(key=lambda r: (sigma_ts.index(r.params["sigma_t"]), r.trial))
    return RunResult(records, {}, {"nu1": p.nu1, "nu2": p.nu2, "n": n, "d_e": spec.d_e,
                                   "d_iv": spec.d_iv, "sigma": spec.sigma})


# expansion fuzzing -----------------------------------------------------------------

def run_expansion_fuzz(cfg: ExperimentConfig) -> dict:
    """Random finite spaces and classifiers checked against the minority-set bound."""
    from . import expansion

    n_max = int(cfg.get("n_max", 12))
    counts = {"instances": 0, "constant_applicable": 0, "constant_violations": 0,
              "multiplicative_applicable": 0, "multiplicative_violations": 0,
              "small_mu_premise_holds": 0}
    skipped = {}
    violations = []
    for t in range(cfg.trials):
        rng = substream(cfg.seed, t)
        k = int(rng.integers(1, 4))
        space = expansion.random_space(rng, n_max=n_max, n_classes=k)
        h = expansion.random_classifier(space, rng)
        q = float(rng.uniform(0.01, 0.49))
        rep = expansion.verify_lemma_c3(space, h, q)
        counts["instances"] += 1
        counts["small_mu_premise_holds"] += int(rep.small_mu_premise)
        for name, br in (("constant", rep.constant_branch), ("multiplicative", rep.multiplicative_branch)):
            if br.applicable:
                counts[f"{name}_applicable"] += 1
                if not br.passed:
                    counts[f"{name}_violations"] += 1
                    violations.append({"trial": t, "branch": name, "space": space.to_dict(),
                                       "h": [h.h[pt] for pt in space.points], "report": rep.to_dict()})
            else:
                key = f"{name}: {br.reason}"
                skipped[key] = skipped.get(key, 0) + 1
    return {"seed": cfg.seed, "trials": cfg.trials, "n_max": n_max, "counts": counts,
            "skipped": dict(sorted(skipped.items())), "violations": violations,
            "passed": not violations}


RUNNERS = {
    "linear": run_linear_sweep,
    "logistic": run_logistic_sweep,
    "misspec": run_misspec_sweep,
    "domain": run_domain_adaptation,
    "expansion": run_expansion_fuzz,
}


def run(cfg: ExperimentConfig):
    return RUNNERS[cfg.runner](cfg)


# emission ---------------------------------------------------------------------------

def _scalar(v):
    if isinstance(v, (np.generic,)):
        return v.item()
    return v


def emit(records, fmt: str, path: str, config: ExperimentConfig | dict | None = None) -> None:
    """Write records as CSV or JSON plus a ``<path>.meta.json`` sidecar."""
    if fmt not in ("csv", "json"):
        raise InvalidInputError(f"format must be csv or json, got {fmt!r}")
    records = list(records)
    try:
        if fmt == "json":
            with open(path, "w") as fh:
                json.dump([r.to_dict() for r in records], fh, indent=1, default=_scalar)
        else:
            pkeys = sorted({k for r in records for k in r.params})
            akeys = sorted({k for r in records for k, v in r.aux.items()
                            if not isinstance(v, (list, dict))})
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["trial", "method", *pkeys, "excess_risk", *[f"aux_{k}" for k in akeys]])
                for r in records:
                    w.writerow([r.trial, r.method, *[_scalar(r.params.get(k, "")) for k in pkeys],
                                repr(r.excess_risk), *[_scalar(r.aux.get(k, "")) for k in akeys]])
        cfg_dict = config.to_dict() if isinstance(config, ExperimentConfig) else (config or {})
        meta = {"config": cfg_dict, "seed": cfg_dict.get("seed"), "version": __version__,
                "records": len(records), "format": fmt}
        with open(path + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True, default=_scalar)
    except OSError as exc:
        raise OSError(f"cannot write results to {os.fspath(path)!r}: {exc}") from exc


def load_json_records(path: str) -> list:
    with open(path) as fh:
        return [TrialRecord.from_dict(o) for o in json.load(fh)]
