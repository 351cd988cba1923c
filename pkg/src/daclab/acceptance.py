"""Acceptance checks 1-11, shared by the test suite and ``daclab verify``.

Each check returns a :class:`CheckResult`; nothing here raises on a failed
check, so a full run always reports every line.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import estimators, expansion, matkit, theory
from .augment import AugmentationSpec, build_augmented, d_aug_of, d_prime_details
from .datagen import gen_linear, preset
from .experiments import (ExperimentConfig, run_domain_adaptation, run_expansion_fuzz,
                          run_linear_sweep, run_logistic_sweep, run_misspec_sweep, summarize)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:>2} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _pooled(a, b):
    return math.sqrt(a[1] ** 2 + b[1] ** 2)


def check_1(seed: int = 0) -> CheckResult:
    """Fixed-design risks at d_aug = 25 against the closed forms."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig("example_4_1", trials=2000, seed=seed, sweep={"cells": [{"d_c1": 5, "d_e1": 10}]})
    res = run_linear_sweep(cfg)
    s = summarize(res)
    dac, erm = s[("dac_hard",)], s[("da_erm",)]
    rep = res.theory[0]
    target_erm = (5 + rep.d_prime) / 50
    ok_dac = abs(dac[0] - 0.1) <= 3 * dac[1]
    ok_erm = abs(erm[0] - target_erm) <= 3 * erm[1]
    secs = time.perf_counter() - t0
    detail = (f"DAC {dac[0]:.4f}+-{dac[1]:.4f} vs 0.1; DA-ERM {erm[0]:.4f}+-{erm[1]:.4f} "
              f"vs (5+d')/50={target_erm:.4f} (d'={rep.d_prime:.3f})")
    return CheckResult(1, "fixed-design DAC/DA-ERM risk", ok_dac and ok_erm and secs < 60, detail, secs)


def _random_instance(rng, kind=None):
    d = int(rng.integers(3, 9))
    n = int(rng.integers(d, 3 * d + 1))
    alpha = int(rng.integers(1, 4))
    kind = kind or rng.choice(["BlockScale", "CoordinateResample", "GaussianJitter", "LinearMaps", "EnvSignFlip"])
    if kind == "BlockScale":
        d_c1 = int(rng.integers(0, d))
        d_e1 = int(rng.integers(0, d - d_c1 + 1))
        spec = AugmentationSpec.block_scale(d_c1, d_e1, float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)), alpha)
    elif kind == "CoordinateResample":
        spec = AugmentationSpec.coordinate_resample(int(rng.integers(0, d + 1)), alpha)
    elif kind == "GaussianJitter":
        spec = AugmentationSpec.gaussian_jitter(int(rng.integers(0, d + 1)), float(rng.uniform(0.05, 2)), alpha)
    elif kind == "LinearMaps":
        spec = AugmentationSpec.linear_maps([np.eye(d) + 0.5 * rng.standard_normal((d, d)) for _ in range(alpha)])
    elif kind == "EnvSignFlip":
        spec = AugmentationSpec("EnvSignFlip", alpha, {"env_dim": int(rng.integers(0, d + 1))})
    else:
        spec = AugmentationSpec.identity(alpha)
    x = rng.standard_normal((n, d))
    return build_augmented(x, rng.standard_normal(n), spec, rng)


def check_2(seed: int = 0) -> CheckResult:
    """0 <= raw d' <= d_aug on random instances and d' = 0 for identity copies."""
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 2])
    bad = []
    worst_low = 0.0
    for i in range(100):
        aug = _random_instance(rng)
        dp = d_prime_details(aug)
        worst_low = min(worst_low, dp.raw)
        # -1e-9 absorbs round-off when d' is exactly zero in exact arithmetic
        if not (-1e-9 <= dp.raw <= dp.d_aug + 1e-6):
            bad.append((i, dp.raw, dp.d_aug))
    ident = [d_prime_details(_random_instance(rng, "IdentityCopies")).raw for _ in range(20)]
    ok_ident = max(abs(v) for v in ident) <= 1e-8
    detail = (f"{len(bad)} range violations in 100 instances (min raw d'={worst_low:.2e}); "
              f"identity max |d'|={max(abs(v) for v in ident):.1e}")
    return CheckResult(2, "d' invariants", not bad and ok_ident, detail, time.perf_counter() - t0)


def check_3(seed: int = 0) -> CheckResult:
    """Soft-DAC variance/bias identities and the DA-ERM variance lower bound."""
    t0 = time.perf_counter()
    p = preset("example_6", seed)
    rng = np.random.default_rng([seed, 3])
    x, _ = gen_linear(p.model, p.N, rng)
    aug = build_augmented(x, np.zeros(p.N), AugmentationSpec.gaussian_jitter(24, p.noise_std, 1), rng)
    theta, sigma, lam = p.model.theta_star, p.sigma, 3.2
    sbv = theory.soft_bias_variance(aug, theta, sigma, lam)
    mean_theta = estimators.dac_soft_ls(aug.with_labels(x @ theta), lam).theta_hat
    bias = matkit.seminorm_sq(mean_theta - theta, x.T @ x / p.N)
    draws = 5000
    devs = np.empty(draws)
    for t in range(draws):
        y = x @ theta + sigma * rng.standard_normal(p.N)
        th = estimators.dac_soft_ls(aug.with_labels(y), lam).theta_hat
        r = x @ (th - mean_theta)
        devs[t] = r @ r / p.N
    emp_var = float(devs.mean())
    rel = abs(emp_var - sbv.var) / sbv.var
    ok_var = rel <= 0.05
    ok_bias = abs(bias - sbv.bias) <= 1e-8

    violations = 0
    for _ in range(50):
        inst = _random_instance(rng, rng.choice(["GaussianJitter", "LinearMaps", "BlockScale"]))
        if matkit.rank_tol(inst.x_aug_stacked) < inst.d or matkit.rank_tol(inst.x) < inst.d:
            inst = build_augmented(rng.standard_normal((3 * inst.d, inst.d)), np.zeros(3 * inst.d),
                                   AugmentationSpec.gaussian_jitter(inst.d, 0.5, 1), rng)
        mt = theory.da_erm_misspec_terms(inst, rng.standard_normal(inst.d), 1.0)
        if mt.var_lb > mt.var_exact * (1 + 1e-10):
            violations += 1
    detail = (f"var MC {emp_var:.6f} vs {sbv.var:.6f} (rel {rel:.3%}); bias |diff| {abs(bias - sbv.bias):.1e}; "
              f"lower-bound violations {violations}/50")
    return CheckResult(3, "soft-DAC identities", ok_var and ok_bias and violations == 0, detail,
                       time.perf_counter() - t0)


def check_4(seed: int = 0) -> CheckResult:
    """lambda -> 0 and lambda -> inf limits, and identity-copy equalities."""
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 4])
    worst = [0.0, 0.0, 0.0]
    for _ in range(20):
        n, d = int(rng.integers(8, 40)), int(rng.integers(3, 12))
        x, y = rng.standard_normal((n, d)), rng.standard_normal(n)
        aug = build_augmented(x, y, AugmentationSpec.gaussian_jitter(int(rng.integers(1, d)), 0.3, 2), rng)
        ols = estimators.ols(x, y).theta_hat
        worst[0] = max(worst[0], np.max(np.abs(estimators.dac_soft_ls(aug, 0.0).theta_hat - ols)))
        hard = estimators.dac_hard_ls(aug).theta_hat
        soft = estimators.dac_soft_ls(aug, 1e10).theta_hat
        worst[1] = max(worst[1], np.linalg.norm(soft - hard) / max(np.linalg.norm(hard), 1e-300))
        ident = build_augmented(x, y, AugmentationSpec.identity(int(rng.integers(1, 4))))
        e = estimators.da_erm_ls(ident).theta_hat
        h = estimators.dac_hard_ls(ident).theta_hat
        worst[2] = max(worst[2], np.max(np.abs(e - ols)), np.max(np.abs(h - ols)))
    ok = worst[0] <= 1e-8 and worst[1] <= 1e-4 and worst[2] <= 1e-10
    detail = f"lambda=0 vs OLS {worst[0]:.1e}; lambda=1e10 vs hard {worst[1]:.1e} rel; identity {worst[2]:.1e}"
    return CheckResult(4, "limit equivalences", ok, detail, time.perf_counter() - t0)


def check_5(seed: int = 0, trials: int = 200) -> CheckResult:
    """DAC flat in alpha at d_aug = 25 and better than DA-ERM at alpha = 1."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig("example_4_2", trials=trials, seed=seed, sweep={"d_aug": [25], "alpha": [1, 3, 7, 15]})
    s = summarize(run_logistic_sweep(cfg), by=("method", "alpha"))
    dac = {a: s[("dac_hard", a)] for a in (1, 3, 7, 15)}
    flat_gap = max(abs(dac[a][0] - dac[b][0]) / max(_pooled(dac[a], dac[b]), 1e-300)
                   if abs(dac[a][0] - dac[b][0]) > 0 else 0.0
                   for a, b in itertools.combinations(dac, 2))
    erm1 = s[("da_erm", 1)]
    margin = (erm1[0] - dac[1][0]) / _pooled(erm1, dac[1])
    secs = time.perf_counter() - t0
    detail = (f"max pairwise DAC gap {flat_gap:.2f} pooled SE; DA-ERM - DAC at alpha=1: "
              f"{erm1[0] - dac[1][0]:.4f} = {margin:.1f} pooled SE")
    return CheckResult(5, "logistic alpha-invariance", flat_gap <= 2 and margin >= 3 and secs < 180, detail, secs)


def check_6(seed: int = 0, trials: int = 1000) -> CheckResult:
    """Misspecified augmentations at d_aug = 24, alpha = 1."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig("example_6", trials=trials, seed=seed, sweep={"d_aug": [24], "alpha": [1]})
    res = run_misspec_sweep(cfg)
    s = summarize(res, by=("method", "lambda"))
    soft = {k[1]: v for k, v in s.items() if k[0] == "dac_soft"}
    lam_best = min(soft, key=lambda k: soft[k][0])
    erm = s[("da_erm", None)]
    margin = (erm[0] - soft[lam_best][0]) / _pooled(erm, soft[lam_best])
    lam_star = res.meta["lambda_star"][0]
    star = s[("dac_soft_star", lam_star)]
    lo, hi = min(soft), max(soft)
    u_shape = star[0] <= soft[lo][0] and star[0] <= soft[hi][0]
    detail = (f"best grid lambda {lam_best:g}: {soft[lam_best][0]:.5f} vs DA-ERM {erm[0]:.5f} ({margin:.1f} SE); "
              f"lambda*={lam_star:.3g}: {star[0]:.5f} vs lambda={lo:g}: {soft[lo][0]:.5f}, "
              f"lambda={hi:g}: {soft[hi][0]:.5f}")
    return CheckResult(6, "misspecified augmentation sweep", margin >= 3 and u_shape, detail,
                       time.perf_counter() - t0)


def check_7(seed: int = 0, trials: int = 500) -> CheckResult:
    """Target-domain separation between DA-ERM and DAC, increasing in sigma_t."""
    t0 = time.perf_counter()
    res = run_domain_adaptation(ExperimentConfig("example_C1", trials=trials, seed=seed,
                                                 sweep={"sigma_t": [1.0, 5.0, 10.0]}))
    s = summarize(res, by=("method", "sigma_t"))
    gaps = {st: s[("da_erm", st)][0] - s[("dac_hard", st)][0] for st in (1.0, 5.0, 10.0)}
    z10 = gaps[10.0] / _pooled(s[("da_erm", 10.0)], s[("dac_hard", 10.0)])
    mono = gaps[1.0] < gaps[5.0] < gaps[10.0]
    detail = f"gaps {', '.join(f'{k:g}: {v:.4f}' for k, v in gaps.items())}; sigma_t=10 gap {z10:.1f} SE"
    return CheckResult(7, "domain adaptation separation", z10 >= 3 and mono, detail, time.perf_counter() - t0)


def check_8(seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rep = run_expansion_fuzz(ExperimentConfig("expansion", trials=200, seed=seed, overrides={"n_max": 12}))
    c = rep["counts"]
    applicable = c["constant_applicable"] + c["multiplicative_applicable"]
    detail = (f"{c['constant_violations']} + {c['multiplicative_violations']} violations; "
              f"applicable constant={c['constant_applicable']}, multiplicative={c['multiplicative_applicable']}")
    return CheckResult(8, "minority-set lemma fuzz", rep["passed"] and applicable > 0, detail,
                       time.perf_counter() - t0)


def check_9(seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 9])
    rad_bad = 0
    for _ in range(50):
        n, d = int(rng.integers(5, 60)), int(rng.integers(2, 15))
        k = int(rng.integers(0, d + 1))
        delta = rng.standard_normal((k, d)) if k else np.zeros((1, d))
        r = theory.rademacher_linear_dac(rng.standard_normal((n, d)) * rng.uniform(0.5, 3),
                                         delta, float(rng.uniform(0.5, 5)), 2000, rng)
        if r.estimate > r.closed_form_bound + 3 * r.std_error:
            rad_bad += 1
    rel = []
    for d_aug in (5, 15, 25):
        x = rng.standard_normal((1000, 30))
        aug = build_augmented(x, np.zeros(1000), AugmentationSpec.coordinate_resample(d_aug, 1), rng)
        assert d_aug_of(aug) == d_aug
        c_n = theory.two_layer_bound(x, aug.delta, 1.0, 1.0).c_n
        rel.append(abs(c_n**2 - (30 - d_aug)) / (30 - d_aug))
    detail = f"Rademacher bound violations {rad_bad}/50; max rel |c_n^2 - (d - d_aug)| {max(rel):.3f}"
    return CheckResult(9, "complexity bounds", rad_bad == 0 and max(rel) <= 0.1, detail, time.perf_counter() - t0)


def _random_matrix(rng):
    m, n = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    r = int(rng.integers(0, min(m, n) + 1))
    scale = 10.0 ** rng.uniform(-3, 3)
    return scale * (rng.standard_normal((m, r)) @ rng.standard_normal((r, n)))


def check_10(seed: int = 0, cases: int = 500) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 10])
    failures = []
    for i in range(cases):
        a = _random_matrix(rng)
        ap = matkit.pinv(a)
        s = max(np.linalg.norm(a, 2), 1e-300)
        sp = max(np.linalg.norm(ap, 2), 1e-300)
        conds = [
            np.linalg.norm(a @ ap @ a - a, 2) / s,
            np.linalg.norm(ap @ a @ ap - ap, 2) / sp,
            np.linalg.norm(a @ ap - (a @ ap).T, 2),
            np.linalg.norm(ap @ a - (ap @ a).T, 2),
        ]
        if max(conds) > 1e-8:
            failures.append((i, "moore-penrose", max(conds)))
        for which in ("row_space", "null_space", "column_space"):
            p = matkit.proj(a, which).p
            err = max(np.max(np.abs(p @ p - p), initial=0.0), np.max(np.abs(p - p.T), initial=0.0))
            if err > 1e-8:
                failures.append((i, which, err))
        # Loewner certificate: A <= c B with A built inside Range(B)
        k = int(rng.integers(1, 7))
        g = rng.standard_normal((k, int(rng.integers(1, k + 1))))
        b = g @ g.T
        h = rng.standard_normal((g.shape[1], g.shape[1]))
        amat = g @ (h @ h.T) @ g.T
        c = matkit.min_dominating_scalar(amat, b)
        gap = np.linalg.eigvalsh(c * b - amat)
        scale = max(np.linalg.norm(amat, 2), np.linalg.norm(c * b, 2), 1e-300)
        if gap[0] < -1e-8 * scale:
            failures.append((i, "dominance", gap[0] / scale))
        # tightness: (1 - 1e-6) c no longer dominates
        if c > 0 and np.linalg.eigvalsh((1 - 1e-6) * c * b - amat)[0] >= 0:
            failures.append((i, "tightness", c))
    detail = f"{len(failures)} failures in {cases} cases" + (f"; first {failures[0]}" if failures else "")
    return CheckResult(10, "numerical kernel properties", not failures, detail, time.perf_counter() - t0)


def check_11(seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 11])
    x = rng.standard_normal((40, 8))
    y = rng.standard_normal(40)
    aug = build_augmented(x, y, AugmentationSpec.coordinate_resample(3, 2), rng)
    est = estimators.relu_fit(aug, "dac", 6, 2.0, estimators.OptimizerConfig(500, 0.1, 1e-7, seed))
    row = matkit.row_basis(aug.delta)
    worst = 0.0
    for _ in range(100):
        xt = rng.standard_normal((20, 8))
        v = row @ (10.0 * rng.standard_normal((row.shape[1], 20)))
        worst = max(worst, float(np.max(np.abs(est.predict(xt + v.T) - est.predict(xt)))))
    b = rng.standard_normal((5, 2))
    b /= np.linalg.norm(b, axis=0)
    w = np.array([0.6, -0.4])
    xs = rng.standard_normal((200, 5))
    ys = np.maximum(xs @ b, 0) @ w
    fit = estimators.relu_fit(build_augmented(xs, ys, AugmentationSpec.identity(1)), "dac", 8, 2.0,
                              estimators.OptimizerConfig(5000, 0.5, 1e-9, seed))
    mse = float(np.mean((fit.predict(xs) - ys) ** 2))
    detail = f"max prediction change along Row(Delta) {worst:.1e}; teacher-student train MSE {mse:.1e}"
    return CheckResult(11, "ReLU consistency", worst <= 1e-10 and mse <= 1e-3, detail, time.perf_counter() - t0)


CHECKS = {i: globals()[f"check_{i}"] for i in range(1, 12)}


def run_all(numbers=None, seed: int = 0, echo=print) -> list:
    results = []
    for i in numbers or sorted(CHECKS):
        res = CHECKS[i](seed=seed)
        if echo:
            echo(res.line())
        results.append(res)
    return results
