"""Closed-form risk predictions, bias/variance identities and complexity bounds.

These double as oracles for the Monte Carlo experiments: everything that is an
exact identity in fixed design is computed here in closed form.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import matkit
from .augment import AugmentedDataset, RankDeficientError, d_aug_of, d_prime_details
from .datagen import DomainSpec
from .estimators import soft_normal_matrices
from .matkit import InvalidInputError


@dataclass
class TheoryReport:
    d: int
    d_aug: int
    d_prime: float
    dac_risk_pred: float
    da_erm_risk_pred: float
    soft_var: float
    soft_bias: float
    optimal_lambda: float
    c_x: float
    c_s: float
    da_erm_bias: float
    da_erm_var_lb: float

    def to_dict(self) -> dict:
        # JSON has no infinity; unbounded values (e.g. optimal_lambda under an
        # exactly label-invariant augmentation) are written as null
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                for k, v in asdict(self).items()}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, obj: dict) -> "TheoryReport":
        return cls(**{k: (math.inf if v is None else v) for k, v in obj.items()})


def dac_risk_pred(d: int, d_aug: int, sigma: float, n: int) -> float:
    """(d - d_aug) sigma^2 / n."""
    if not 0 <= d_aug <= d:
        raise InvalidInputError(f"need 0 <= d_aug <= d, got d_aug={d_aug}, d={d}")
    if n < 1:
        raise InvalidInputError("n must be positive")
    return (d - d_aug) * sigma**2 / n


def da_erm_risk_pred(d: int, d_aug: int, d_prime: float, sigma: float, n: int) -> float:
    """(d - d_aug + d') sigma^2 / n."""
    if not 0 <= d_prime <= d_aug:
        raise InvalidInputError(f"d_prime must lie in [0, d_aug={d_aug}], got {d_prime}")
    return dac_risk_pred(d, d_aug, sigma, n) + d_prime * sigma**2 / n


class SoftBiasVariance(NamedTuple):
    var: float
    bias: float


def soft_bias_variance(aug: AugmentedDataset, theta_star, sigma: float, lam: float) -> SoftBiasVariance:
    """Fixed-design variance and squared bias of the soft consistency estimator.

    With K = (Sigma_X + lam Sigma_Delta)^+ Sigma_X: Var = sigma^2/N tr(K^2) and
    Bias = ||K theta* - theta*||^2 in the Sigma_X seminorm. ``lam = inf`` gives
    the hard-constraint limit.
    """
    theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
    if lam < 0:
        raise InvalidInputError("lambda must be non-negative")
    n = aug.n
    sx, sd = soft_normal_matrices(aug)
    if np.isinf(lam):
        q = matkit.null_basis(aug.delta, aug.tol)
        # limit operator: Q (Q^T Sx Q)^+ Q^T Sx
        k = q @ matkit.pinv(q.T @ sx @ q, aug.tol) @ q.T @ sx
    elif lam == 0:
        k = matkit.pinv(sx, aug.tol) @ sx
    else:
        # (Sx + lam Sd)^+ Sx through the stacked least-squares system, column by column
        n_rows = aug.n
        w = np.sqrt(lam / ((1 + aug.alpha) * n_rows))
        a = np.vstack([aug.x / np.sqrt(n_rows), w * aug.delta])
        rhs = np.vstack([aug.x / np.sqrt(n_rows), np.zeros_like(aug.delta)])
        k = matkit.lstsq_min_norm(a, rhs)
    var = sigma**2 / n * float(np.trace(k @ k))
    bias = matkit.seminorm_sq(k @ theta_star - theta_star, sx, check=False)
    return SoftBiasVariance(var, bias)


def soft_bias_variance_eigen(aug: AugmentedDataset, theta_star, sigma: float, lam: float) -> SoftBiasVariance:
    """Eigen-form cross-check; requires Sigma_X to be invertible.

    G = Sx^{-1/2} Sd Sx^{-1/2} = Q diag(gamma) Q^T and vartheta = Q^T Sx^{1/2} P_Delta theta*.
    Var = sigma^2/N [(d - rank G) + sum_{gamma>0} 1/(1+lam gamma)^2],
    Bias = sum vartheta_i^2 (lam gamma_i / (1 + lam gamma_i))^2.
    """
    theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
    sx, sd = soft_normal_matrices(aug)
    w, v = np.linalg.eigh(sx)
    if w[0] <= aug.tol * max(w[-1], 1.0):
        raise InvalidInputError("Sigma_X is singular; eigen-form unavailable")
    sx_half = (v * np.sqrt(w)) @ v.T
    sx_mhalf = (v / np.sqrt(w)) @ v.T
    g = sx_mhalf @ sd @ sx_mhalf
    gam, qg = np.linalg.eigh(0.5 * (g + g.T))
    pos = gam > aug.tol * max(float(gam[-1]), 1.0)
    gam = np.where(pos, gam, 0.0)
    p_delta = matkit.proj(aug.delta, "row_space", aug.tol).p
    vartheta = qg.T @ sx_half @ p_delta @ theta_star
    if np.isinf(lam):
        var_terms = np.zeros(int(pos.sum()))
        shrink = np.where(pos, 1.0, 0.0)
    else:
        var_terms = 1.0 / (1.0 + lam * gam[pos]) ** 2
        shrink = lam * gam / (1.0 + lam * gam)
    var = sigma**2 / aug.n * ((aug.d - int(pos.sum())) + float(var_terms.sum()))
    bias = float(np.sum(vartheta**2 * shrink**2))
    return SoftBiasVariance(var, bias)


def misspecification(aug: AugmentedDataset, theta_star) -> float:
    """||P_Delta theta*||^2 in the Sigma_Delta seminorm (equals theta*^T Sigma_Delta theta*)."""
    theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
    r = aug.delta @ theta_star
    return float(r @ r) / ((1 + aug.alpha) * aug.n)


def _trace_sx_sd_pinv(aug: AugmentedDataset) -> float:
    sx, sd = soft_normal_matrices(aug)
    return float(np.trace(sx @ matkit.pinv(sd, aug.tol)))


def optimal_lambda(aug: AugmentedDataset, theta_star, sigma: float, zero_tol: float = 1e-12) -> float:
    """sqrt(sigma^2 tr(Sigma_X Sigma_Delta^+) / (N ||P_Delta theta*||^2_{Sigma_Delta})).

    Returns ``math.inf`` when the augmentation does not misspecify theta*
    (hard consistency is then optimal).
    """
    b = misspecification(aug, theta_star)
    scale = float(np.sum(aug.delta**2)) / ((1 + aug.alpha) * aug.n)
    theta_sq = float(np.dot(theta_star, theta_star))
    if b <= zero_tol * max(scale * theta_sq, 1e-300):
        return math.inf
    return math.sqrt(sigma**2 * _trace_sx_sd_pinv(aug) / (aug.n * b))


def soft_risk_surrogate(aug: AugmentedDataset, theta_star, sigma: float, lam: float) -> float:
    """Upper-bound surrogate minimized by :func:`optimal_lambda`."""
    d_aug = d_aug_of(aug)
    n = aug.n
    return (sigma**2 * (aug.d - d_aug) / n
            + sigma**2 * _trace_sx_sd_pinv(aug) / (2 * n * lam)
            + lam / 2 * misspecification(aug, theta_star))


class MisspecTerms(NamedTuple):
    bias: float
    var_lb: float
    c_x: float
    c_s: float
    var_exact: float


def _dominating_or_inf(a, b, tol):
    try:
        return matkit.min_dominating_scalar(a, b, tol)
    except matkit.NoFiniteScalarError:
        return math.inf


def da_erm_misspec_terms(aug: AugmentedDataset, theta_star, sigma: float) -> MisspecTerms:
    """Augmented-ERM bias, variance lower bound and distortion factors on the original design."""
    theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
    a = aug.x_aug_stacked
    if matkit.rank_tol(a, aug.tol) < aug.d:
        raise RankDeficientError("augmented design does not have full column rank")
    n, a1 = aug.n, aug.alpha + 1
    a_pinv = matkit.pinv(a, aug.tol)
    p_delta = matkit.proj(aug.delta, "row_space", aug.tol).p
    # Delta~ = M~ X A^+ Delta, so ||Delta~ v||^2 / ((1+alpha) N) = ||X A^+ Delta v||^2 / N
    r = aug.x @ (a_pinv @ (aug.delta @ (p_delta @ theta_star)))
    bias = float(r @ r) / n
    sx = aug.x.T @ aug.x / n
    s_mat = a.reshape(a1, n, aug.d).sum(axis=0) / a1  # M~^T A / (1 + alpha)
    ss = s_mat.T @ s_mat / n
    sa = a.T @ a / (a1 * n)
    c_x = _dominating_or_inf(sa, sx, aug.tol)
    c_s = _dominating_or_inf(sa, ss, aug.tol)
    # an unbounded distortion factor makes the lower bound vacuous (zero)
    var_lb = sigma**2 * aug.d / (n * c_x * c_s)
    sa_inv = np.linalg.inv(sa)
    var_exact = sigma**2 / n * float(np.trace(sx @ sa_inv @ ss @ sa_inv))
    return MisspecTerms(bias, var_lb, c_x, c_s, var_exact)


def theory_report(aug: AugmentedDataset, theta_star, sigma: float, lam: float | None = None) -> TheoryReport:
    """Collect every closed-form quantity for one fixed design.

    ``lam`` defaults to the closed-form optimal lambda.
    """
    theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
    d, n = aug.d, aug.n
    d_aug = d_aug_of(aug)
    try:
        dp = d_prime_details(aug).value
    except RankDeficientError:
        dp = math.nan
    lam_opt = optimal_lambda(aug, theta_star, sigma)
    lam_used = lam_opt if lam is None else lam
    sbv = soft_bias_variance(aug, theta_star, sigma, lam_used)
    try:
        mt = da_erm_misspec_terms(aug, theta_star, sigma)
    except RankDeficientError:
        mt = MisspecTerms(math.nan, math.nan, math.nan, math.nan, math.nan)
    return TheoryReport(
        d=d,
        d_aug=d_aug,
        d_prime=dp,
        dac_risk_pred=dac_risk_pred(d, d_aug, sigma, n),
        da_erm_risk_pred=da_erm_risk_pred(d, d_aug, dp, sigma, n) if math.isfinite(dp) else math.nan,
        soft_var=sbv.var,
        soft_bias=sbv.bias,
        optimal_lambda=lam_opt,
        c_x=mt.c_x,
        c_s=mt.c_s,
        da_erm_bias=mt.bias,
        da_erm_var_lb=mt.var_lb,
    )


# complexity bounds --------------------------------------------------------------

class RademacherResult(NamedTuple):
    estimate: float
    closed_form_bound: float
    std_error: float


def rademacher_linear_dac(x, delta, c0: float, mc_draws: int = 1000, rng=None) -> RademacherResult:
    """Empirical Rademacher complexity of {x -> theta^T x : ||theta|| <= c0, Delta theta = 0}.

    The supremum is (c0/n) ||sum_i eps_i P_perp x_i||; its mean over sign
    vectors is estimated by Monte Carlo and compared with the Jensen bound
    (c0/sqrt(n)) sqrt(tr(P_perp X^T X P_perp)/n).
    """
    if mc_draws < 100:
        raise InvalidInputError("mc_draws must be at least 100")
    x = matkit.as_matrix(x, "x")
    n = x.shape[0]
    p_perp = matkit.proj(delta, "null_space").p
    xp = x @ p_perp
    rng = np.random.default_rng(rng)
    eps = rng.choice([-1.0, 1.0], size=(mc_draws, n))
    vals = c0 / n * np.linalg.norm(eps @ xp, axis=1)
    bound = c0 / math.sqrt(n) * math.sqrt(float(np.sum(xp**2)) / n)
    return RademacherResult(float(vals.mean()), bound, float(vals.std(ddof=1) / math.sqrt(mc_draws)))


def prop51_bound(rad: float, c_l: float, b: float, delta_prob: float, n: int) -> float:
    """4 C_l R_N + sqrt(2 B^2 log(2/delta) / N)."""
    if not 0 < delta_prob < 1:
        raise InvalidInputError("delta_prob must lie in (0, 1)")
    return 4 * c_l * rad + math.sqrt(2 * b**2 * math.log(2 / delta_prob) / n)


class TwoLayerBound(NamedTuple):
    c_n: float
    bound: float


def two_layer_bound(x, delta, c_w: float, sigma: float) -> TwoLayerBound:
    """c_n = sqrt(mean ||P_perp x_i||^2), bound = sigma c_w c_n / sqrt(n)."""
    x = matkit.as_matrix(x, "x")
    n = x.shape[0]
    xp = x @ matkit.proj(delta, "null_space").p
    c_n = math.sqrt(float(np.sum(xp**2)) / n)
    return TwoLayerBound(c_n, sigma * c_w * c_n / math.sqrt(n))


# domain adaptation ----------------------------------------------------------------

class TargetQuantities(NamedTuple):
    sigma_xt: np.ndarray
    target_excess: float


def domain_target_quantities(spec: DomainSpec, theta) -> TargetQuantities:
    """Target covariance S_iv S_iv^T + sigma_t S_e S_e^T and excess 1/2 ||theta - theta*||^2 under it."""
    sigma_xt = spec.p_iv + spec.sigma_t * spec.p_e
    diff = np.asarray(theta, dtype=float).reshape(-1) - spec.theta_star
    return TargetQuantities(sigma_xt, 0.5 * matkit.seminorm_sq(diff, sigma_xt, check=False))


class EERResult(NamedTuple):
    estimate: float
    std_error: float
    exact: float
    degenerate: bool


def _eer_operator(aug: AugmentedDataset, spec: DomainSpec):
    """Linear map z -> (1/((1+alpha) n)) Sigma^+ A(X_e)^T M~ z, as a d x n matrix."""
    a1, n = aug.alpha + 1, aug.n
    a_e = aug.x_aug_stacked @ spec.p_e
    sig = a_e.T @ a_e / (a1 * n)
    mz = a_e.reshape(a1, n, aug.d).sum(axis=0).T  # A_e^T M~ as d x n
    return matkit.pinv(sig, aug.tol) @ mz / (a1 * n), a_e


def eer_e(aug: AugmentedDataset, spec: DomainSpec, trials: int = 1000, rng=None) -> EERResult:
    """Environmental-subspace excess-risk term of augmented ERM.

    Monte Carlo over fresh noise z ~ N(0, sigma^2 I) with the design fixed; the
    closed form sigma^2/2 ||op||_F^2 is returned alongside.
    """
    if trials < 100:
        raise InvalidInputError("trials must be at least 100")
    op, a_e = _eer_operator(aug, spec)
    if np.max(np.abs(a_e), initial=0.0) == 0.0:
        return EERResult(0.0, 0.0, 0.0, True)
    rng = np.random.default_rng(rng)
    z = spec.sigma * rng.standard_normal((trials, aug.n))
    vals = 0.5 * np.sum((z @ op.T) ** 2, axis=1)
    exact = 0.5 * spec.sigma**2 * float(np.sum(op**2))
    return EERResult(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials)), exact, False)


def eer_e_lower_bound(x_source, spec: DomainSpec, nu1: float, nu2: float) -> float:
    """Per-draw lower bound on EER_e for the linear-map construction.

    With E the environmental coordinates of the training inputs the covariance
    of the augmented environmental block is at most (nu1^2/n) E^T E, and the
    mean map has smallest singular value nu2, so
    EER_e >= sigma^2/2 (nu2^2 / nu1^4) tr(E^T E) / lambda_max(E^T E)^2.
    """
    e = np.asarray(x_source, dtype=float) @ spec.s_e
    g = e.T @ e
    top = float(np.linalg.eigvalsh(g)[-1])
    if top == 0.0:
        return 0.0
    return 0.5 * spec.sigma**2 * nu2**2 / nu1**4 * float(np.trace(g)) / top**2


def eer_e_shape(spec: DomainSpec, n: int, nu1: float, nu2: float, factor: float = 0.8) -> float:
    """Distribution-level shape factor * sigma^2 d_e/(2n) * nu2^2/nu1^4."""
    return factor * spec.sigma**2 * spec.d_e / (2 * n) * nu2**2 / nu1**4
