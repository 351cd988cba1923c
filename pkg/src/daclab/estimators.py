"""Estimators: OLS, augmented ERM, hard/soft consistency-regularized regression,
constrained logistic regression and a small two-layer ReLU fitter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matkit
from .augment import AugmentedDataset, replicate_labels
from .matkit import InvalidInputError


@dataclass(frozen=True)
class LinearEstimate:
    theta_hat: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 5000
    step_size: float = 0.1
    grad_tol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidInputError("step_size must be positive")
        if not self.grad_tol > 0:
            raise InvalidInputError("grad_tol must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be at least 1")


@dataclass(frozen=True)
class ReluEstimate:
    b_hat: np.ndarray
    w_hat: np.ndarray
    method: str
    train_loss: float
    converged: bool = False
    iterations: int = 0

    def predict(self, x) -> np.ndarray:
        return relu_predict(x, self.b_hat, self.w_hat)


def _linear(theta, method, x, y, **extra) -> LinearEstimate:
    diag = {
        "residual_norm": float(np.linalg.norm(x @ theta - y)),
        "effective_rank": matkit.rank_tol(x) if x.size else 0,
    }
    diag.update(extra)
    return LinearEstimate(theta, method, diag)


def ols(x, y) -> LinearEstimate:
    """Minimum-norm least squares X^+ y."""
    x = matkit.as_matrix(x, "x")
    y = np.asarray(y, dtype=float).reshape(-1)
    return _linear(matkit.pinv(x) @ y, "ols", x, y)


def da_erm_ls(aug: AugmentedDataset) -> LinearEstimate:
    """Least squares on the stacked augmented data with replicated labels."""
    my = replicate_labels(aug)
    theta = matkit.pinv(aug.x_aug_stacked, aug.tol) @ my
    return _linear(theta, "da_erm", aug.x_aug_stacked, my)


def dac_hard_ls(aug: AugmentedDataset) -> LinearEstimate:
    """min ||y - X theta||^2 subject to Delta theta = 0 (minimum-norm solution)."""
    q = matkit.null_basis(aug.delta, aug.tol)
    if q.shape[1] == 0:
        theta = np.zeros(aug.d)
        return _linear(theta, "dac_hard", aug.x, aug.y, degenerate_constraint=True)
    xq = aug.x @ q
    theta = q @ (matkit.pinv(xq, aug.tol) @ aug.y)
    return _linear(theta, "dac_hard", aug.x, aug.y, degenerate_constraint=False,
                   constraint_residual=float(np.max(np.abs(aug.delta @ theta), initial=0.0)))


def soft_normal_matrices(aug: AugmentedDataset):
    """(Sigma_X, Sigma_Delta) = (X^T X / N, Delta^T Delta / ((1+alpha) N))."""
    n = aug.n
    sx = aug.x.T @ aug.x / n
    sd = aug.delta.T @ aug.delta / ((1 + aug.alpha) * n)
    return sx, sd


def _soft_system(aug: AugmentedDataset, lam: float):
    # (Sigma_X + lam Sigma_Delta) theta = X^T y / N is the normal equation of this
    # stacked least-squares problem; solving it directly keeps the tiny singular
    # values that a relative pinv cutoff would drop when lam is huge.
    n = aug.n
    w = np.sqrt(lam / ((1 + aug.alpha) * n))
    a = np.vstack([aug.x / np.sqrt(n), w * aug.delta])
    b = np.concatenate([aug.y / np.sqrt(n), np.zeros(aug.delta.shape[0])])
    return a, b


def dac_soft_ls(aug: AugmentedDataset, lam: float) -> LinearEstimate:
    """theta = (Sigma_X + lam Sigma_Delta)^+ X^T y / N."""
    if lam < 0 or np.isnan(lam):
        raise InvalidInputError(f"lambda must be non-negative, got {lam}")
    if np.isinf(lam):
        est = dac_hard_ls(aug)
        return LinearEstimate(est.theta_hat, "dac_soft", {**est.diagnostics, "lambda": lam})
    if lam == 0:
        theta = matkit.pinv(aug.x, aug.tol) @ aug.y
    else:
        a, b = _soft_system(aug, lam)
        theta = matkit.lstsq_min_norm(a, b)
    return _linear(theta, "dac_soft", aug.x, aug.y, **{"lambda": float(lam)},
                   constraint_residual=float(np.linalg.norm(aug.delta @ theta)))


def excess_risk_fixed_design(theta, theta_star, aug: AugmentedDataset, design: str = "augmented") -> float:
    """Fixed-design excess risk on the augmented or the original design."""
    diff = np.asarray(theta, dtype=float).reshape(-1) - np.asarray(theta_star, dtype=float).reshape(-1)
    if diff.size != aug.d:
        raise InvalidInputError(f"theta has {diff.size} entries, design has {aug.d} columns")
    if design == "augmented":
        r = aug.x_aug_stacked @ diff
        return float(r @ r) / ((1 + aug.alpha) * aug.n)
    if design == "original":
        r = aug.x @ diff
        return float(r @ r) / aug.n
    raise InvalidInputError(f"design must be 'augmented' or 'original', got {design!r}")


# logistic regression ---------------------------------------------------------

def logistic_loss(theta, x, y) -> float:
    t = x @ theta
    return float(np.mean(np.logaddexp(0.0, t) - y * t))


def logistic_grad(theta, x, y) -> np.ndarray:
    t = x @ theta
    p = np.exp(-np.logaddexp(0.0, -t))
    return x.T @ (p - y) / x.shape[0]


def project_ball(v, radius):
    norm = np.linalg.norm(v)
    return v if norm <= radius else v * (radius / norm)


def logistic_step_size(x) -> float:
    """1 / L for the mean logistic loss, L = lambda_max(X^T X) / (4 m)."""
    lmax = np.linalg.norm(x, 2) ** 2 / (4 * x.shape[0])
    return 1.0 / lmax if lmax > 0 else 1.0


def _pgd(loss, grad, z0, radius, opt: OptimizerConfig):
    z = project_ball(z0, radius)
    eta = opt.step_size
    f = loss(z)
    best, best_f = z, f
    trace = [f]
    converged = False
    it = 0
    for it in range(1, opt.max_iters + 1):
        g = grad(z)
        z_new = project_ball(z - eta * g, radius)
        gmap = (z - z_new) / eta
        z = z_new
        f = loss(z)
        trace.append(f)
        if f < best_f:
            best, best_f = z, f
        if np.linalg.norm(gmap) <= opt.grad_tol:
            converged = True
            break
    return best, best_f, converged, it, trace


def logistic_fit(aug: AugmentedDataset, mode: str, c0: float, opt: OptimizerConfig = OptimizerConfig()) -> LinearEstimate:
    """Projected gradient descent on the mean logistic loss over {||theta|| <= c0}.

    ``da_erm`` trains on the stacked data with replicated labels. ``dac_hard``
    writes theta = Q beta with Q an orthonormal basis of Null(Delta) and trains
    on the original samples only; ||theta|| = ||beta|| so the ball is preserved.
    Labels are in {0, 1}.
    """
    if not c0 > 0:
        raise InvalidInputError("c0 must be positive")
    if mode == "da_erm":
        feats, labels, q = aug.x_aug_stacked, replicate_labels(aug), None
    elif mode == "dac_hard":
        q = matkit.null_basis(aug.delta, aug.tol)
        feats, labels = aug.x @ q, aug.y
    else:
        raise InvalidInputError(f"unknown logistic mode {mode!r}")
    k = feats.shape[1]
    if k == 0:
        theta = np.zeros(aug.d)
        return LinearEstimate(theta, mode, {"converged": True, "iterations": 0,
                                            "loss": float(np.log(2.0)), "loss_trace": [np.log(2.0)],
                                            "degenerate_constraint": True})
    best, best_f, converged, iters, trace = _pgd(
        lambda z: logistic_loss(z, feats, labels),
        lambda z: logistic_grad(z, feats, labels),
        np.zeros(k), c0, opt,
    )
    theta = best if q is None else q @ best
    return LinearEstimate(theta, mode, {"converged": converged, "iterations": iters,
                                        "loss": best_f, "loss_trace": trace})


# two-layer ReLU ----------------------------------------------------------------

def relu_predict(x, b, w) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=float) @ b, 0.0) @ w


def project_l1_ball(v, radius):
    """Euclidean projection onto {||w||_1 <= radius} (sort-based simplex projection)."""
    v = np.asarray(v, dtype=float)
    if np.abs(v).sum() <= radius:
        return v.copy()
    u = np.sort(np.abs(v))[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, u.size + 1)
    rho = np.nonzero(u * ks > css - radius)[0][-1]
    tau = (css[rho] - radius) / (rho + 1)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def _normalize_columns(b, rng):
    norms = np.linalg.norm(b, axis=0)
    dead = norms < 1e-12
    if np.any(dead):
        b = b.copy()
        b[:, dead] = rng.standard_normal((b.shape[0], int(dead.sum())))
        norms = np.linalg.norm(b, axis=0)
    return b / norms


def relu_fit(aug: AugmentedDataset, mode: str, width: int, c_w: float,
             opt: OptimizerConfig = OptimizerConfig()) -> ReluEstimate:
    """Fit h(x) = (x^T B)_+ w under ||b_k|| = 1 and ||w||_1 <= c_w with square loss 1/2 (h - y)^2.

    In ``dac`` mode every column of B is kept in Null(Delta), which makes the
    hidden layer exactly invariant to the training augmentations; the loss is
    then taken over the original samples. ``da_erm`` trains on the stacked data.
    """
    if width < 1 or not c_w > 0:
        raise InvalidInputError("need width >= 1 and c_w > 0")
    rng = np.random.default_rng(opt.seed)
    if mode == "dac":
        proj = matkit.proj(aug.delta, "null_space", aug.tol)
        p_perp = proj.p
        if proj.rank == 0:
            raise InvalidInputError("augmentations leave no invariant direction")
        x, y = aug.x, aug.y
    elif mode == "da_erm":
        p_perp = None
        x, y = aug.x_aug_stacked, replicate_labels(aug)
    else:
        raise InvalidInputError(f"unknown relu mode {mode!r}")

    def constrain(b):
        if p_perp is not None:
            b = p_perp @ b
        b = _normalize_columns(b, rng)
        if p_perp is not None:
            b = p_perp @ b
            b = b / np.linalg.norm(b, axis=0)
        return b

    m = x.shape[0]
    b = constrain(rng.standard_normal((aug.d, width)))
    w = project_l1_ball(rng.uniform(-1, 1, width) * c_w / width, c_w)
    eta = opt.step_size

    def loss_of(b, w):
        r = relu_predict(x, b, w) - y
        return 0.5 * float(r @ r) / m

    best = (loss_of(b, w), b, w)
    converged = False
    it = 0
    for it in range(1, opt.max_iters + 1):
        pre = x @ b
        h = np.maximum(pre, 0.0)
        r = h @ w - y
        gw = h.T @ r / m
        gb = x.T @ ((r[:, None] * w[None, :]) * (pre > 0)) / m
        b_new = constrain(b - eta * gb)
        w_new = project_l1_ball(w - eta * gw, c_w)
        step = np.sqrt(np.sum((b_new - b) ** 2) + np.sum((w_new - w) ** 2)) / eta
        b, w = b_new, w_new
        cur = loss_of(b, w)
        if cur < best[0]:
            best = (cur, b, w)
        if step <= opt.grad_tol:
            converged = True
            break
    loss, b, w = best
    return ReluEstimate(b, w, mode, loss, converged, it)
