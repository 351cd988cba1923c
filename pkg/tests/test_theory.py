import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from daclab import augment, datagen, estimators as est, theory
from daclab.augment import AugmentationSpec
from daclab.matkit import InvalidInputError


@pytest.fixture
def tiny():
    # X = I_2, copy diag(1, 2); Sigma_X = I/2, Sigma_Delta = diag(0, 1/4)
    return augment.build_augmented(np.eye(2), [0.0, 0.0], AugmentationSpec.block_scale(1, 1, 2.0))


def test_risk_predictions():
    assert theory.dac_risk_pred(30, 25, 1.0, 50) == pytest.approx(0.1)
    assert theory.da_erm_risk_pred(30, 25, 5.0, 2.0, 50) == pytest.approx(10 * 4 / 50)
    with pytest.raises(InvalidInputError):
        theory.dac_risk_pred(3, 4, 1.0, 10)
    with pytest.raises(InvalidInputError):
        theory.da_erm_risk_pred(30, 5, 6.0, 1.0, 10)


@pytest.mark.parametrize("lam", [0.0, 0.5, 2.0, 10.0])
def test_soft_bias_variance_hand_values(tiny, lam):
    # K = diag(1, 2 / (2 + lam))
    theta = np.array([0.0, 1.0])
    sbv = theory.soft_bias_variance(tiny, theta, 1.0, lam)
    assert sbv.var == pytest.approx(0.5 * (1 + 4 / (2 + lam) ** 2))
    assert sbv.bias == pytest.approx(0.5 * lam**2 / (2 + lam) ** 2, abs=1e-15)
    eig = theory.soft_bias_variance_eigen(tiny, theta, 1.0, lam)
    assert eig.var == pytest.approx(sbv.var)
    assert eig.bias == pytest.approx(sbv.bias, abs=1e-15)


def test_soft_bias_variance_hard_limit(tiny):
    theta = np.array([0.0, 1.0])
    sbv = theory.soft_bias_variance(tiny, theta, 1.0, math.inf)
    assert sbv.var == pytest.approx(0.5)
    assert sbv.bias == pytest.approx(0.5)
    assert theory.soft_bias_variance_eigen(tiny, theta, 1.0, math.inf) == pytest.approx(tuple(sbv))


def test_misspecification_and_optimal_lambda(tiny):
    theta = np.array([0.0, 1.0])
    assert theory.misspecification(tiny, theta) == pytest.approx(0.25)
    # tr(Sigma_X Sigma_Delta^+) = 2, so lambda* = sqrt(sigma^2 * 2 / (2 * 0.25)) = 2 sigma
    assert theory.optimal_lambda(tiny, theta, 1.5) == pytest.approx(3.0)
    assert theory.optimal_lambda(tiny, np.array([1.0, 0.0]), 1.0) == math.inf
    # the surrogate is minimized at lambda*
    lams = np.linspace(0.5, 8, 200)
    vals = [theory.soft_risk_surrogate(tiny, theta, 1.5, lam) for lam in lams]
    assert lams[int(np.argmin(vals))] == pytest.approx(3.0, abs=0.05)


def test_da_erm_misspec_hand_values(tiny):
    theta = np.array([0.0, 1.0])
    mt = theory.da_erm_misspec_terms(tiny, theta, 1.0)
    assert mt.bias == pytest.approx(0.08)
    assert mt.c_x == pytest.approx(2.5)
    assert mt.c_s == pytest.approx(10 / 9)
    assert mt.var_lb == pytest.approx(0.36)
    assert mt.var_exact == pytest.approx(0.68)


def test_da_erm_misspec_matches_estimator_moments():
    rng = np.random.default_rng(3)
    n, d, sigma = 12, 4, 0.7
    x = rng.standard_normal((n, d))
    theta = rng.standard_normal(d)
    aug = augment.build_augmented(x, np.zeros(n), AugmentationSpec.block_scale(2, 1, 1.5, 0.5, alpha=2))
    m = augment.stack_operator(n, 2)
    op = np.linalg.pinv(aug.x_aug_stacked) @ m  # theta_hat = op y
    mean_err = op @ x @ theta - theta
    bias = mean_err @ (x.T @ x / n) @ mean_err
    var = sigma**2 * np.trace(x.T @ x / n @ op @ op.T)
    mt = theory.da_erm_misspec_terms(aug, theta, sigma)
    assert mt.bias == pytest.approx(bias)
    assert mt.var_exact == pytest.approx(var)
    assert mt.var_lb <= mt.var_exact * (1 + 1e-9)


def test_unbounded_distortion_gives_zero_lower_bound():
    # a copy that zeroes a coordinate leaves Sigma_S singular in that direction
    x = np.eye(3)
    aug = augment.build_augmented(x, np.zeros(3), AugmentationSpec.block_scale(2, 1, -1.0, 0.0))
    mt = theory.da_erm_misspec_terms(aug, np.ones(3), 1.0)
    assert mt.c_s == math.inf
    assert mt.var_lb == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(8, 20), st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**31 - 1),
       st.floats(1e-2, 1e2))
def test_direct_and_eigen_forms_agree(n, d, alpha, seed, lam):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    theta = rng.standard_normal(d)
    k = int(rng.integers(0, d + 1))
    aug = augment.build_augmented(x, np.zeros(n), AugmentationSpec.gaussian_jitter(k, 0.5, alpha), rng=rng)
    a = theory.soft_bias_variance(aug, theta, 0.3, lam)
    b = theory.soft_bias_variance_eigen(aug, theta, 0.3, lam)
    assert a.var == pytest.approx(b.var, rel=1e-7)
    assert a.bias == pytest.approx(b.bias, rel=1e-6, abs=1e-12)


def test_soft_risk_matches_monte_carlo():
    rng = np.random.default_rng(11)
    n, d, sigma, lam = 20, 5, 0.5, 1.7
    x = rng.standard_normal((n, d))
    theta = rng.standard_normal(d)
    aug = augment.build_augmented(x, np.zeros(n), AugmentationSpec.gaussian_jitter(3, 0.4, 1), rng=rng)
    risks = []
    for _ in range(4000):
        y = x @ theta + sigma * rng.standard_normal(n)
        t = est.dac_soft_ls(aug.with_labels(y), lam).theta_hat
        risks.append(est.excess_risk_fixed_design(t, theta, aug, "original"))
    risks = np.asarray(risks)
    sbv = theory.soft_bias_variance(aug, theta, sigma, lam)
    se = risks.std(ddof=1) / np.sqrt(risks.size)
    assert abs(risks.mean() - (sbv.var + sbv.bias)) < 4 * se


def test_theory_report_json_round_trip():
    p = datagen.preset("example_4_1")
    x, y = datagen.gen_linear(p.model, p.N, rng=0)
    aug = augment.build_augmented(x, y, p.augmentation)
    rep = theory.theory_report(aug, p.model.theta_star, 1.0)
    assert rep.d_aug == 25
    assert rep.dac_risk_pred == pytest.approx(0.1)
    assert rep.optimal_lambda == math.inf
    text = rep.to_json()
    obj = json.loads(text)
    assert obj["optimal_lambda"] is None
    back = theory.TheoryReport.from_dict(obj)
    assert back.optimal_lambda == math.inf
    assert back.d_prime == pytest.approx(rep.d_prime)


def test_rademacher_orthonormal_rows_is_exact():
    # rows e_1..e_n: ||sum eps_i e_i|| = sqrt(n) for every sign vector
    x = np.eye(9)
    res = theory.rademacher_linear_dac(x, np.zeros((0, 9)), c0=2.0, mc_draws=200, rng=0)
    assert res.estimate == pytest.approx(2.0 / 3.0)
    assert res.closed_form_bound == pytest.approx(2.0 / 3.0)
    assert res.std_error == pytest.approx(0.0, abs=1e-12)


def test_rademacher_respects_constraints():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 6))
    delta = np.hstack([np.zeros((4, 3)), rng.standard_normal((4, 3))])
    full = theory.rademacher_linear_dac(x, np.zeros((0, 6)), 1.0, 2000, rng=1)
    con = theory.rademacher_linear_dac(x, delta, 1.0, 2000, rng=1)
    assert con.estimate < full.estimate
    assert con.estimate <= con.closed_form_bound
    with pytest.raises(InvalidInputError):
        theory.rademacher_linear_dac(x, delta, 1.0, 10)


def test_prop51_and_two_layer_bounds():
    assert theory.prop51_bound(0.1, 2.0, 1.0, 0.5, 8) == pytest.approx(0.8 + math.sqrt(2 * math.log(4) / 8))
    x = np.array([[3.0, 4.0], [0.0, 2.0]])
    tl = theory.two_layer_bound(x, np.array([[0.0, 1.0]]), c_w=2.0, sigma=0.5)
    assert tl.c_n == pytest.approx(math.sqrt(9 / 2))
    assert tl.bound == pytest.approx(0.5 * 2.0 * math.sqrt(9 / 2) / math.sqrt(2))


def test_domain_target_quantities():
    p = datagen.preset("example_C1")
    spec = p.model.with_sigma_t(4.0)
    tq = theory.domain_target_quantities(spec, spec.theta_star + spec.s_e[:, 0])
    assert tq.target_excess == pytest.approx(2.0)
    tq = theory.domain_target_quantities(spec, spec.theta_star + spec.s_iv[:, 0])
    assert tq.target_excess == pytest.approx(0.5)


def test_eer_e_monte_carlo_and_bounds():
    p = datagen.preset("example_C1")
    spec = p.model
    rng = np.random.default_rng(0)
    for _ in range(5):
        x, y = datagen.gen_domain(spec, "source", p.N, rng)
        aug = augment.build_augmented(x, y, p.augmentation)
        res = theory.eer_e(aug, spec, trials=4000, rng=rng)
        assert not res.degenerate
        assert abs(res.estimate - res.exact) < 5 * res.std_error
        assert theory.eer_e_lower_bound(x, spec, p.nu1, p.nu2) <= res.exact
    assert theory.eer_e_shape(spec, 60, 1.0, 1.0) == pytest.approx(0.8 * 5 / 120)


def test_eer_e_degenerate():
    p = datagen.preset("example_C1")
    aug = augment.build_augmented(np.zeros((4, p.d)), np.zeros(4), p.augmentation)
    assert theory.eer_e(aug, p.model, 100).degenerate


def test_optimal_lambda_minimizes_surrogate_on_example_6():
    p = datagen.preset("example_6")
    x, _ = datagen.gen_linear(p.model, p.N, rng=0)
    aug = augment.build_augmented(x, np.zeros(p.N), p.augmentation, rng=1)
    theta = p.model.theta_star
    lam = theory.optimal_lambda(aug, theta, p.sigma)
    assert math.isfinite(lam)
    f = lambda v: theory.soft_risk_surrogate(aug, theta, p.sigma, v)  # noqa: E731
    assert f(lam) <= f(lam / 10) and f(lam) <= f(10 * lam)


def test_two_layer_constant_shrinks_with_stronger_augmentation():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 8))
    prev = math.inf
    for k in range(9):
        aug = augment.build_augmented(x, np.zeros(200), AugmentationSpec.block_scale(8 - k, k, 2.0, 1.0))
        c_n = theory.two_layer_bound(x, aug.delta, 1.0, 1.0).c_n
        assert c_n <= prev + 1e-12
        prev = c_n
