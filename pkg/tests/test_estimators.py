import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from daclab import augment, estimators as est
from daclab.augment import AugmentationSpec
from daclab.estimators import OptimizerConfig
from daclab.matkit import InvalidInputError


@pytest.fixture
def tiny():
    # X = I_2, y = (1, 2); the single copy doubles the second coordinate
    spec = AugmentationSpec.block_scale(1, 1, scale_e1=2.0)
    return augment.build_augmented(np.eye(2), [1.0, 2.0], spec)


def test_ols_min_norm():
    r = est.ols([[1.0, 1.0]], [2.0])
    np.testing.assert_allclose(r.theta_hat, [1.0, 1.0])


def test_hard_dac_hand_value(tiny):
    r = est.dac_hard_ls(tiny)
    np.testing.assert_allclose(r.theta_hat, [1.0, 0.0], atol=1e-14)
    assert r.diagnostics["constraint_residual"] < 1e-14


def test_da_erm_hand_value(tiny):
    # stacked normal equations: diag(2, 5) theta = (2, 6)
    np.testing.assert_allclose(est.da_erm_ls(tiny).theta_hat, [1.0, 1.2])


@pytest.mark.parametrize("lam", [0.0, 0.5, 2.0, 30.0])
def test_soft_dac_hand_value(tiny, lam):
    # Sigma_X = I/2, Sigma_Delta = diag(0, 1/4), X^T y / N = (1/2, 1)
    np.testing.assert_allclose(est.dac_soft_ls(tiny, lam).theta_hat, [1.0, 4.0 / (2.0 + lam)])


def test_soft_dac_limits(tiny):
    np.testing.assert_allclose(est.dac_soft_ls(tiny, np.inf).theta_hat, [1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(est.dac_soft_ls(tiny, 1e12).theta_hat, [1.0, 0.0], atol=1e-10)
    with pytest.raises(InvalidInputError):
        est.dac_soft_ls(tiny, -1.0)
    with pytest.raises(InvalidInputError):
        est.dac_soft_ls(tiny, np.nan)


def test_hard_dac_with_empty_null_space():
    aug = augment.build_augmented(np.eye(2), [1.0, 1.0], AugmentationSpec("EnvSignFlip", 1, {"env_dim": 2}))
    r = est.dac_hard_ls(aug)
    assert r.diagnostics["degenerate_constraint"]
    np.testing.assert_array_equal(r.theta_hat, 0)


def test_excess_risk_designs(tiny):
    theta_star = np.zeros(2)
    theta = np.array([0.0, 1.0])
    # augmented: rows (0,1),(0,0)... second coordinate appears as 1 and 2 -> (1 + 4) / 4
    assert est.excess_risk_fixed_design(theta, theta_star, tiny) == pytest.approx(5 / 4)
    assert est.excess_risk_fixed_design(theta, theta_star, tiny, "original") == pytest.approx(1 / 2)
    with pytest.raises(InvalidInputError):
        est.excess_risk_fixed_design(theta, theta_star, tiny, "test")


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 20), st.integers(2, 8), st.integers(1, 3), st.integers(0, 2**31 - 1),
       st.floats(1e-3, 1e3))
def test_soft_matches_normal_equations(n, d, alpha, seed, lam):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    k = int(rng.integers(0, d + 1))
    aug = augment.build_augmented(x, y, AugmentationSpec.coordinate_resample(k, alpha), rng=rng)
    sx, sd = est.soft_normal_matrices(aug)
    expect = np.linalg.pinv(sx + lam * sd) @ (x.T @ y / n)
    got = est.dac_soft_ls(aug, lam).theta_hat
    np.testing.assert_allclose(got, expect, atol=1e-7 * max(1, np.abs(expect).max()))
    hard = est.dac_hard_ls(aug).theta_hat
    assert np.abs(aug.delta @ hard).max(initial=0) < 1e-8


def test_hard_dac_is_constrained_least_squares():
    # compare with a KKT solve of min ||X t - y||^2 s.t. Delta t = 0
    rng = np.random.default_rng(4)
    x = rng.standard_normal((15, 6))
    y = rng.standard_normal(15)
    aug = augment.build_augmented(x, y, AugmentationSpec.coordinate_resample(2, 1), rng=rng)
    c = aug.delta[np.abs(aug.delta).sum(axis=1) > 0]
    _, s, vt = np.linalg.svd(c)
    c = vt[: int(np.sum(s > 1e-10))]
    kkt = np.block([[2 * x.T @ x, c.T], [c, np.zeros((c.shape[0], c.shape[0]))]])
    sol = np.linalg.solve(kkt, np.concatenate([2 * x.T @ y, np.zeros(c.shape[0])]))
    np.testing.assert_allclose(est.dac_hard_ls(aug).theta_hat, sol[:6], atol=1e-10)


def test_logistic_interior_optimum():
    # three copies of x = 1 with labels (1, 1, 0): sigmoid(theta) = 2/3
    x = np.ones((3, 1))
    aug = augment.build_augmented(x, [1.0, 1.0, 0.0], AugmentationSpec.identity())
    r = est.logistic_fit(aug, "da_erm", c0=5.0, opt=OptimizerConfig(5000, 1.0, 1e-10))
    assert r.theta_hat[0] == pytest.approx(np.log(2.0), abs=1e-6)
    assert r.diagnostics["converged"]


def test_logistic_separable_hits_ball():
    x = np.array([[1.0], [-1.0]])
    aug = augment.build_augmented(x, [1.0, 0.0], AugmentationSpec.identity())
    r = est.logistic_fit(aug, "da_erm", c0=2.5, opt=OptimizerConfig(2000, 1.0, 1e-10))
    assert r.theta_hat[0] == pytest.approx(2.5)


def test_logistic_dac_stays_in_null_space():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 6))
    y = (x[:, 0] > 0).astype(float)
    aug = augment.build_augmented(x, y, AugmentationSpec.coordinate_resample(3, 2), rng=rng)
    r = est.logistic_fit(aug, "dac_hard", c0=3.0, opt=OptimizerConfig(500, est.logistic_step_size(x), 1e-6))
    np.testing.assert_allclose(r.theta_hat[3:], 0, atol=1e-10)
    assert np.linalg.norm(r.theta_hat) <= 3.0 + 1e-12
    trace = r.diagnostics["loss_trace"]
    assert r.diagnostics["loss"] <= trace[0]
    with pytest.raises(InvalidInputError):
        est.logistic_fit(aug, "soft", 1.0)


def test_logistic_gradient_matches_finite_difference():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((10, 3))
    y = rng.integers(0, 2, 10).astype(float)
    theta = rng.standard_normal(3)
    g = est.logistic_grad(theta, x, y)
    h = 1e-6
    fd = [(est.logistic_loss(theta + h * e, x, y) - est.logistic_loss(theta - h * e, x, y)) / (2 * h)
          for e in np.eye(3)]
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_project_l1_ball():
    np.testing.assert_allclose(est.project_l1_ball([3.0, 1.0], 2.0), [2.0, 0.0])
    np.testing.assert_allclose(est.project_l1_ball([1.0, -1.0], 1.0), [0.5, -0.5])
    np.testing.assert_allclose(est.project_l1_ball([0.2, 0.1], 1.0), [0.2, 0.1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.floats(0.01, 5))
def test_project_l1_ball_properties(v, r):
    p = est.project_l1_ball(v, r)
    assert np.abs(p).sum() <= r + 1e-9
    # optimality: no feasible point on a coarse perturbation is closer
    v = np.asarray(v)
    base = np.sum((p - v) ** 2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = est.project_l1_ball(p + 0.1 * rng.standard_normal(p.size), r)
        assert np.sum((q - v) ** 2) >= base - 1e-9


def test_project_ball():
    np.testing.assert_allclose(est.project_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])


def test_relu_teacher_student_fits():
    rng = np.random.default_rng(0)
    d, width = 4, 2
    b_star = np.eye(d)[:, :width]
    w_star = np.array([0.5, 0.5])
    x = rng.standard_normal((80, d))
    y = est.relu_predict(x, b_star, w_star)
    aug = augment.build_augmented(x, y, AugmentationSpec.coordinate_resample(2, 1), rng=rng)
    r = est.relu_fit(aug, "dac", width, 1.0, OptimizerConfig(3000, 0.5, 1e-9, seed=1))
    assert r.train_loss < 1e-4
    # hidden units are invariant to the training augmentations
    np.testing.assert_allclose(aug.delta @ r.b_hat, 0, atol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(r.b_hat, axis=0), 1.0)
    assert np.abs(r.w_hat).sum() <= 1.0 + 1e-12
    np.testing.assert_allclose(r.predict(x), est.relu_predict(x, r.b_hat, r.w_hat))


def test_relu_modes_and_validation():
    x = np.eye(3)
    aug = augment.build_augmented(x, np.zeros(3), AugmentationSpec("EnvSignFlip", 1, {"env_dim": 3}))
    with pytest.raises(InvalidInputError):
        est.relu_fit(aug, "dac", 2, 1.0)
    with pytest.raises(InvalidInputError):
        est.relu_fit(aug, "other", 2, 1.0)
    r = est.relu_fit(aug, "da_erm", 2, 1.0, OptimizerConfig(50))
    assert r.method == "da_erm" and r.iterations >= 1


def test_optimizer_config_validation():
    with pytest.raises(InvalidInputError):
        OptimizerConfig(step_size=0)
    with pytest.raises(InvalidInputError):
        OptimizerConfig(max_iters=0)
    with pytest.raises(InvalidInputError):
        OptimizerConfig(grad_tol=-1)
