"""Synthetic data generators and the named example configurations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentationSpec
from .matkit import InvalidInputError


def _vec(v, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return v


def _check_n(n):
    if int(n) != n or n < 1:
        raise InvalidInputError(f"n must be a positive integer, got {n}")
    return int(n)


@dataclass(frozen=True)
class LinearModelSpec:
    d: int
    theta_star: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        theta = _vec(self.theta_star, "theta_star")
        if theta.size != self.d:
            raise InvalidInputError(f"theta_star has {theta.size} entries, expected {self.d}")
        if self.sigma < 0:
            raise InvalidInputError("sigma must be non-negative")
        object.__setattr__(self, "theta_star", theta)

    def to_dict(self):
        return {"d": self.d, "theta_star": self.theta_star.tolist(), "sigma": self.sigma}

    @classmethod
    def from_dict(cls, obj):
        return cls(int(obj["d"]), obj["theta_star"], float(obj.get("sigma", 1.0)))


@dataclass(frozen=True)
class LogisticModelSpec:
    d: int
    theta_star: np.ndarray
    c0: float
    feature_clip: float = 0.0  # D; 0 disables clipping

    def __post_init__(self):
        theta = _vec(self.theta_star, "theta_star")
        if theta.size != self.d:
            raise InvalidInputError(f"theta_star has {theta.size} entries, expected {self.d}")
        if np.linalg.norm(theta) > self.c0:
            raise InvalidInputError("||theta_star|| exceeds the ball radius c0")
        if self.feature_clip < 0:
            raise InvalidInputError("feature_clip must be non-negative")
        object.__setattr__(self, "theta_star", theta)

    def to_dict(self):
        return {"d": self.d, "theta_star": self.theta_star.tolist(), "c0": self.c0,
                "feature_clip": self.feature_clip}

    @classmethod
    def from_dict(cls, obj):
        return cls(int(obj["d"]), obj["theta_star"], float(obj["c0"]),
                   float(obj.get("feature_clip", 0.0)))


@dataclass(frozen=True)
class ReluNetSpec:
    d: int
    width: int
    b_star: np.ndarray
    w_star: np.ndarray
    sigma: float = 0.0
    c_w: float = 1.0

    def __post_init__(self):
        b = np.asarray(self.b_star, dtype=float)
        w = _vec(self.w_star, "w_star")
        if b.shape != (self.d, self.width) or w.size != self.width:
            raise InvalidInputError("b_star must be d x width and w_star length width")
        if np.max(np.abs(np.linalg.norm(b, axis=0) - 1.0), initial=0.0) > 1e-10:
            raise InvalidInputError("columns of b_star must have unit norm")
        if np.abs(w).sum() > self.c_w + 1e-12:
            raise InvalidInputError("||w_star||_1 exceeds c_w")
        if self.sigma < 0:
            raise InvalidInputError("sigma must be non-negative")
        object.__setattr__(self, "b_star", b)
        object.__setattr__(self, "w_star", w)

    def to_dict(self):
        return {"d": self.d, "width": self.width, "b_star": self.b_star.tolist(),
                "w_star": self.w_star.tolist(), "sigma": self.sigma, "c_w": self.c_w}

    @classmethod
    def from_dict(cls, obj):
        return cls(int(obj["d"]), int(obj["width"]), obj["b_star"], obj["w_star"],
                   float(obj.get("sigma", 0.0)), float(obj.get("c_w", 1.0)))


@dataclass(frozen=True)
class DomainSpec:
    """Invariant/environmental feature model.

    x = S_iv zeta_iv + S_e zeta_e with zeta_e = sign(z) e; ``sigma_t`` multiplies
    the covariance of e in the target domain.
    """

    d: int
    d_iv: int
    d_e: int
    s_iv: np.ndarray
    s_e: np.ndarray
    theta_star: np.ndarray
    sigma: float = 1.0
    sigma_t: float = 1.0

    def __post_init__(self):
        s_iv = np.asarray(self.s_iv, dtype=float).reshape(self.d, self.d_iv)
        s_e = np.asarray(self.s_e, dtype=float).reshape(self.d, self.d_e)
        theta = _vec(self.theta_star, "theta_star")
        s = np.hstack([s_iv, s_e])
        if np.linalg.norm(s.T @ s - np.eye(s.shape[1]), 2) > 1e-10:
            raise InvalidInputError("[s_iv, s_e] must have orthonormal columns")
        if np.linalg.norm(s_iv @ (s_iv.T @ theta) - theta) > 1e-10 * max(1.0, np.linalg.norm(theta)):
            raise InvalidInputError("theta_star must lie in Range(s_iv)")
        if self.sigma < 0 or self.sigma_t <= 0:
            raise InvalidInputError("need sigma >= 0 and sigma_t > 0")
        object.__setattr__(self, "s_iv", s_iv)
        object.__setattr__(self, "s_e", s_e)
        object.__setattr__(self, "theta_star", theta)

    @property
    def p_iv(self):
        return self.s_iv @ self.s_iv.T

    @property
    def p_e(self):
        return self.s_e @ self.s_e.T

    def with_sigma_t(self, sigma_t):
        return DomainSpec(self.d, self.d_iv, self.d_e, self.s_iv, self.s_e,
                          self.theta_star, self.sigma, sigma_t)

    def to_dict(self):
        return {"d": self.d, "d_iv": self.d_iv, "d_e": self.d_e, "s_iv": self.s_iv.tolist(),
                "s_e": self.s_e.tolist(), "theta_star": self.theta_star.tolist(),
                "sigma": self.sigma, "sigma_t": self.sigma_t}

    @classmethod
    def from_dict(cls, obj):
        return cls(int(obj["d"]), int(obj["d_iv"]), int(obj["d_e"]), obj["s_iv"], obj["s_e"],
                   obj["theta_star"], float(obj.get("sigma", 1.0)), float(obj.get("sigma_t", 1.0)))


def gen_linear(spec: LinearModelSpec, n: int, rng=None):
    n = _check_n(n)
    rng = np.random.default_rng(rng)
    x = rng.standard_normal((n, spec.d))
    y = x @ spec.theta_star + spec.sigma * rng.standard_normal(n)
    return x, y


def sigmoid(t):
    t = np.asarray(t, dtype=float)
    return np.exp(-np.logaddexp(0.0, -t))


def gen_logistic(spec: LogisticModelSpec, n: int, rng=None):
    n = _check_n(n)
    rng = np.random.default_rng(rng)
    x = rng.standard_normal((n, spec.d))
    if spec.feature_clip > 0:
        norms = np.linalg.norm(x, axis=1)
        over = norms > spec.feature_clip
        x[over] *= (spec.feature_clip / norms[over])[:, None]
    y = (rng.random(n) < sigmoid(x @ spec.theta_star)).astype(float)
    return x, y


def gen_relu(spec: ReluNetSpec, n: int, rng=None):
    n = _check_n(n)
    rng = np.random.default_rng(rng)
    x = rng.standard_normal((n, spec.d))
    y = np.maximum(x @ spec.b_star, 0.0) @ spec.w_star + spec.sigma * rng.standard_normal(n)
    return x, y


def gen_domain(spec: DomainSpec, which: str, n: int, rng=None):
    if which not in ("source", "target"):
        raise InvalidInputError(f"which must be 'source' or 'target', got {which!r}")
    n = _check_n(n)
    rng = np.random.default_rng(rng)
    zeta_iv = rng.standard_normal((n, spec.d_iv))
    z = spec.sigma * rng.standard_normal(n)
    scale = math.sqrt(spec.sigma_t) if which == "target" else 1.0
    e = scale * rng.standard_normal((n, spec.d_e))
    zeta_e = np.sign(z)[:, None] * e
    x = zeta_iv @ spec.s_iv.T + zeta_e @ spec.s_e.T
    y = x @ spec.theta_star + z
    return x, y


# presets ---------------------------------------------------------------------

PRESETS = ("example_4_1", "example_4_2", "example_6", "example_C1")

# half-decade grid; 3.2 (~10^0.5) is the reported optimum for d_aug=24, alpha=1
LAMBDA_GRID = (0.01, 0.032, 0.1, 0.32, 1.0, 3.2, 10.0, 32.0, 100.0, 320.0, 1000.0)


@dataclass
class Preset:
    """A named configuration: model spec, default augmentation and run defaults.

    Entries of ``defaults`` are also reachable as attributes (``p.N``, ``p.sigma``).
    """

    name: str
    model: object
    augmentation: AugmentationSpec
    defaults: dict = field(default_factory=dict)

    def __getattr__(self, key):
        defaults = self.__dict__.get("defaults", {})
        if key in defaults:
            return defaults[key]
        raise AttributeError(key)

    def to_dict(self):
        return {"name": self.name, "model": self.model.to_dict(),
                "augmentation": self.augmentation.to_dict(), "defaults": _jsonable(self.defaults)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def example_c1_maps(spec: DomainSpec, alpha: int, rng):
    """Draw A_j = P_iv + u_j v_j^T with u_j, v_j unit vectors in Col(S_e).

    Returned matrices are A_j^T so that the LinearMaps copy X @ maps[j].T equals
    X A_j (row-vector convention of the construction).
    """
    p_iv = spec.p_iv
    maps = []
    for _ in range(alpha):
        u = spec.s_e @ rng.standard_normal(spec.d_e)
        v = spec.s_e @ rng.standard_normal(spec.d_e)
        a = p_iv + np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
        maps.append(a.T)
    return maps


def map_conditioning(maps_t, d):
    """(nu_1, nu_2) for maps given in stored (transposed) form."""
    a = [np.asarray(m).T for m in maps_t]
    nu1 = max([1.0] + [float(np.linalg.svd(m, compute_uv=False)[0]) for m in a])
    mean_map = (np.eye(d) + sum(a)) / (1 + len(a))
    nu2 = float(np.linalg.svd(mean_map, compute_uv=False)[-1])
    return nu1, nu2


def preset(name: str, seed: int = 0) -> Preset:
    """Configuration of one of the worked examples; random pieces depend on ``seed``."""
    rng = np.random.default_rng(seed)
    if name == "example_4_1":
        d, n = 30, 50
        theta = np.concatenate([rng.standard_normal(5), np.zeros(d - 5)])
        cells = [{"d_c1": 5, "d_e1": k} for k in (0, 5, 10, 15, 20, 25)]
        cells += [{"d_c1": 10, "d_e1": k} for k in (0, 5, 10, 15, 20)]
        return Preset(
            name,
            LinearModelSpec(d, theta, 1.0),
            AugmentationSpec.block_scale(5, 10, 2.0, -1.0, alpha=1),
            {"N": n, "d": d, "sigma": 1.0, "alpha": 1, "cells": cells, "trials": 2000,
             "fixed_design": True},
        )
    if name == "example_4_2":
        d, n = 30, 50
        theta = np.concatenate([rng.standard_normal(3), np.zeros(d - 3)])
        c0 = float(max(5.0, math.ceil(np.linalg.norm(theta) + 1.0)))
        return Preset(
            name,
            LogisticModelSpec(d, theta, c0, 0.0),
            AugmentationSpec.coordinate_resample(25, alpha=1),
            {"N": n, "d": d, "c0": c0, "d_augs": [20, 25], "alphas": [1, 3, 7, 15],
             "trials": 200, "test_size": 10_000, "fixed_design": False},
        )
    if name == "example_6":
        d, n, d_c = 30, 50, 10
        theta = np.concatenate([rng.choice([-1.0, 1.0], size=d_c), np.zeros(d - d_c)])
        return Preset(
            name,
            LinearModelSpec(d, theta, 0.1),
            AugmentationSpec.gaussian_jitter(24, noise_std=0.1, alpha=1),
            {"N": n, "d": d, "sigma": 0.1, "d_c": d_c, "noise_std": 0.1,
             "noise_std_variance_reading": math.sqrt(0.1), "alpha": 1,
             "d_augs": list(range(20, 29)), "lambda_grid": list(LAMBDA_GRID),
             "trials": 2000, "fixed_design": True},
        )
    if name == "example_C1":
        d_iv, d_e, n, alpha = 5, 5, 60, 2
        d = d_iv + d_e
        s, _ = np.linalg.qr(rng.standard_normal((d, d)))
        s_iv, s_e = s[:, :d_iv], s[:, d_iv:]
        theta = s_iv @ rng.standard_normal(d_iv)
        spec = DomainSpec(d, d_iv, d_e, s_iv, s_e, theta, 1.0, 10.0)
        maps = example_c1_maps(spec, alpha, rng)
        nu1, nu2 = map_conditioning(maps, d)
        return Preset(
            name,
            spec,
            AugmentationSpec.linear_maps(maps),
            {"N": n, "n": n, "d": d, "sigma": 1.0, "alpha": alpha, "sigma_ts": [1.0, 5.0, 10.0],
             "trials": 500, "nu1": nu1, "nu2": nu2, "fixed_design": False},
        )
    raise InvalidInputError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def model_from_dict(obj: dict):
    """Rebuild a model spec from its JSON form, dispatching on the fields present."""
    if "s_iv" in obj:
        return DomainSpec.from_dict(obj)
    if "b_star" in obj:
        return ReluNetSpec.from_dict(obj)
    if "c0" in obj:
        return LogisticModelSpec.from_dict(obj)
    return LinearModelSpec.from_dict(obj)


def dumps(spec) -> str:
    return json.dumps(spec.to_dict())
