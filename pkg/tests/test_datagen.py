import json

import numpy as np
import pytest

from daclab import datagen
from daclab.datagen import DomainSpec, LinearModelSpec, LogisticModelSpec, ReluNetSpec
from daclab.matkit import InvalidInputError


def _domain(d_iv=2, d_e=2, seed=0, sigma=1.0, sigma_t=1.0):
    rng = np.random.default_rng(seed)
    d = d_iv + d_e
    s, _ = np.linalg.qr(rng.standard_normal((d, d)))
    theta = s[:, :d_iv] @ np.ones(d_iv)
    return DomainSpec(d, d_iv, d_e, s[:, :d_iv], s[:, d_iv:], theta, sigma, sigma_t)


def test_linear_noiseless_labels_are_exact():
    spec = LinearModelSpec(3, [1.0, -2.0, 0.5], sigma=0.0)
    x, y = datagen.gen_linear(spec, 20, rng=0)
    np.testing.assert_allclose(y, x @ [1.0, -2.0, 0.5])


def test_linear_noise_level():
    spec = LinearModelSpec(2, [0.0, 0.0], sigma=0.5)
    _, y = datagen.gen_linear(spec, 40_000, rng=1)
    assert np.std(y) == pytest.approx(0.5, rel=0.02)


def test_generators_are_seed_deterministic():
    spec = LinearModelSpec(4, np.ones(4))
    a = datagen.gen_linear(spec, 7, rng=3)
    b = datagen.gen_linear(spec, 7, rng=3)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_logistic_labels_follow_sigmoid():
    theta = np.array([2.0, 0.0])
    spec = LogisticModelSpec(2, theta, c0=3.0)
    x, y = datagen.gen_logistic(spec, 60_000, rng=2)
    assert set(np.unique(y)) <= {0.0, 1.0}
    # E[y | x] = sigmoid(2 x_1); check the empirical rate in a slab
    mask = np.abs(x[:, 0] - 0.5) < 0.05
    assert y[mask].mean() == pytest.approx(1 / (1 + np.exp(-1.0)), abs=0.03)


def test_logistic_feature_clip():
    spec = LogisticModelSpec(5, np.zeros(5), c0=1.0, feature_clip=1.5)
    x, _ = datagen.gen_logistic(spec, 500, rng=0)
    assert np.linalg.norm(x, axis=1).max() <= 1.5 + 1e-12


def test_sigmoid_is_stable():
    np.testing.assert_allclose(datagen.sigmoid([-1000.0, 0.0, 1000.0]), [0.0, 0.5, 1.0])


def test_relu_generator_matches_formula():
    b = np.eye(3)[:, :2]
    spec = ReluNetSpec(3, 2, b, [0.5, -0.5], sigma=0.0, c_w=1.0)
    x, y = datagen.gen_relu(spec, 10, rng=0)
    np.testing.assert_allclose(y, 0.5 * np.maximum(x[:, 0], 0) - 0.5 * np.maximum(x[:, 1], 0))


def test_domain_source_target_statistics():
    spec = _domain(sigma_t=4.0)
    xs, ys = datagen.gen_domain(spec, "source", 50_000, rng=0)
    xt, _ = datagen.gen_domain(spec, "target", 50_000, rng=0)
    # environment coordinates have variance 1 in the source and sigma_t in the target
    es = xs @ spec.s_e
    et = xt @ spec.s_e
    assert es.var(axis=0) == pytest.approx([1.0, 1.0], rel=0.03)
    assert et.var(axis=0) == pytest.approx([4.0, 4.0], rel=0.03)
    # sign(z) e is uncorrelated with the environment direction on average
    z = ys - xs @ spec.theta_star
    assert np.mean(np.sign(z)[:, None] * es, axis=0) == pytest.approx([0.0, 0.0], abs=0.03)


def test_model_validation():
    with pytest.raises(InvalidInputError):
        LinearModelSpec(2, [1.0])
    with pytest.raises(InvalidInputError):
        LogisticModelSpec(2, [3.0, 4.0], c0=4.0)
    with pytest.raises(InvalidInputError):
        ReluNetSpec(2, 1, [[2.0], [0.0]], [1.0])
    with pytest.raises(InvalidInputError):
        ReluNetSpec(2, 1, [[1.0], [0.0]], [2.0], c_w=1.0)
    spec = _domain()
    with pytest.raises(InvalidInputError):
        DomainSpec(spec.d, 2, 2, spec.s_iv, spec.s_e, spec.s_e[:, 0], 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        datagen.gen_domain(spec, "test", 3)
    with pytest.raises(InvalidInputError):
        datagen.gen_linear(LinearModelSpec(1, [1.0]), 0)


@pytest.mark.parametrize("spec", [
    LinearModelSpec(2, [1.0, 2.0], 0.3),
    LogisticModelSpec(2, [1.0, 0.0], 2.0, 1.5),
    ReluNetSpec(2, 1, [[1.0], [0.0]], [0.5], 0.1, 1.0),
    _domain(),
])
def test_model_json_round_trip(spec):
    back = datagen.model_from_dict(json.loads(datagen.dumps(spec)))
    assert type(back) is type(spec)
    assert back.to_dict() == spec.to_dict()


@pytest.mark.parametrize("name", datagen.PRESETS)
def test_presets_are_seed_reproducible(name):
    a = datagen.preset(name, seed=5)
    b = datagen.preset(name, seed=5)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    json.loads(json.dumps(a.to_dict()))


def test_preset_example_4_1_layout():
    p = datagen.preset("example_4_1")
    assert (p.N, p.d, p.sigma) == (50, 30, 1.0)
    assert np.count_nonzero(p.model.theta_star) == 5
    assert len(p.cells) == 11
    assert all(c["d_c1"] + c["d_e1"] <= 30 for c in p.cells)


def test_preset_example_4_2_radius():
    p = datagen.preset("example_4_2")
    assert p.c0 >= np.linalg.norm(p.model.theta_star)
    assert p.alphas == [1, 3, 7, 15]


def test_preset_example_6():
    p = datagen.preset("example_6")
    assert set(np.abs(p.model.theta_star[:10])) == {1.0}
    assert np.all(p.model.theta_star[10:] == 0)
    assert p.d_augs == list(range(20, 29))
    assert 3.2 in p.lambda_grid


def test_preset_example_c1_maps():
    p = datagen.preset("example_C1")
    spec = p.model
    for m in p.augmentation.params["maps"]:
        a = m.T
        # identity on the invariant subspace, rank-one map inside the environment subspace
        np.testing.assert_allclose(a @ spec.s_iv, spec.s_iv, atol=1e-12)
        np.testing.assert_allclose(spec.p_iv @ a @ spec.s_e, 0, atol=1e-12)
        assert np.linalg.matrix_rank(spec.s_e.T @ a @ spec.s_e) == 1
    assert p.nu1 >= 1.0 and 0 < p.nu2 <= 1.0


def test_map_conditioning_identity():
    nu1, nu2 = datagen.map_conditioning([np.eye(3), np.eye(3)], 3)
    assert (nu1, nu2) == pytest.approx((1.0, 1.0))


def test_unknown_preset():
    with pytest.raises(InvalidInputError):
        datagen.preset("example_9")


def test_linear_features_fourth_moment():
    spec = LinearModelSpec(2, np.zeros(2))
    x, _ = datagen.gen_linear(spec, 1_000_000, rng=0)
    z = (x - x.mean(axis=0)) / x.std(axis=0)
    assert np.all((np.mean(z**4, axis=0) >= 2.8) & (np.mean(z**4, axis=0) <= 3.2))


def test_sample_covariance_concentrates():
    # the 0.9 / 1.1 band needs n well above 100 d: Wishart edges sit near 1 +- 2 sqrt(d / n)
    d = 5
    n = 2000 * d
    spec = LinearModelSpec(d, np.zeros(d))
    hits = 0
    for t in range(200):
        x, _ = datagen.gen_linear(spec, n, rng=t)
        ev = np.linalg.eigvalsh(x.T @ x / n)
        hits += bool(ev[0] >= 0.9 and ev[-1] <= 1.1)
    assert hits >= 198
