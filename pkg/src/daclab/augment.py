"""Augmented datasets, the difference matrix Delta and augmentation-strength measures.

Row ordering of the stacked design follows the convention used throughout the
package: the N original rows first, then the first augmentation of every
sample, then the second, and so on. Row ``k*N + i`` (k = 1..alpha) is an
augmentation of row ``i``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import matkit
from .matkit import DEFAULT_TOL, InvalidInputError

KINDS = (
    "IdentityCopies",
    "BlockScale",
    "CoordinateResample",
    "GaussianJitter",
    "LinearMaps",
    "EnvSignFlip",
)

_REQUIRED = {
    "IdentityCopies": (),
    "BlockScale": ("d_c1", "d_e1", "scale_e1", "scale_e2"),
    "CoordinateResample": ("d_pert",),
    "GaussianJitter": ("d_pert", "noise_std"),
    "LinearMaps": ("maps",),
    "EnvSignFlip": ("env_dim",),
}


class DegenerateSamplerWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class AugmentationSpec:
    """Declarative recipe for generating ``alpha`` augmentations per sample.

    ``params`` holds the kind-specific fields:

    * ``BlockScale``: ``d_c1, d_e1, scale_e1, scale_e2``. Coordinates are split
      as (x_c1, x_e1, x_e2); the map is (x_c1, s1*x_e1, s2*x_e2).
    * ``CoordinateResample``: ``d_pert``. The last ``d_pert`` coordinates are
      redrawn from N(0, 1) independently for every copy.
    * ``GaussianJitter``: ``d_pert, noise_std``. N(0, noise_std^2) noise is
      added to the last ``d_pert`` coordinates of every copy.
    * ``LinearMaps``: ``maps`` (alpha d-by-d matrices). Copy j is ``X @ maps[j].T``,
      i.e. each map acts on column vectors x -> A_j x.
    * ``EnvSignFlip``: ``env_dim``. Negates the last ``env_dim`` coordinates.
    """

    kind: str
    alpha: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown augmentation kind {self.kind!r}")
        if int(self.alpha) != self.alpha or self.alpha < 1:
            raise InvalidInputError(f"alpha must be a positive integer, got {self.alpha}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.params]
        if missing:
            raise InvalidInputError(f"{self.kind} is missing params {missing}")
        if self.kind == "LinearMaps":
            maps = [np.asarray(m, dtype=float) for m in self.params["maps"]]
            if len(maps) != self.alpha:
                raise InvalidInputError(
                    f"LinearMaps needs alpha={self.alpha} maps, got {len(maps)}"
                )
            d = maps[0].shape[0] if maps else 0
            if any(m.shape != (d, d) for m in maps):
                raise InvalidInputError("LinearMaps maps must all be square d x d")
            object.__setattr__(self, "params", {**self.params, "maps": maps})
        if self.kind == "GaussianJitter" and self.params["noise_std"] < 0:
            raise InvalidInputError("noise_std must be non-negative")

    def __eq__(self, other):
        return isinstance(other, AugmentationSpec) and self.to_dict() == other.to_dict()

    # convenience constructors
    @classmethod
    def identity(cls, alpha=1):
        return cls("IdentityCopies", alpha)

    @classmethod
    def block_scale(cls, d_c1, d_e1, scale_e1=2.0, scale_e2=-1.0, alpha=1):
        return cls("BlockScale", alpha, dict(d_c1=d_c1, d_e1=d_e1, scale_e1=scale_e1, scale_e2=scale_e2))

    @classmethod
    def coordinate_resample(cls, d_pert, alpha=1):
        return cls("CoordinateResample", alpha, dict(d_pert=d_pert))

    @classmethod
    def gaussian_jitter(cls, d_pert, noise_std=0.1, alpha=1):
        return cls("GaussianJitter", alpha, dict(d_pert=d_pert, noise_std=noise_std))

    @classmethod
    def linear_maps(cls, maps):
        maps = list(maps)
        return cls("LinearMaps", len(maps), dict(maps=maps))

    @property
    def deterministic(self) -> bool:
        return self.kind in ("IdentityCopies", "BlockScale", "LinearMaps", "EnvSignFlip")

    def with_alpha(self, alpha: int) -> "AugmentationSpec":
        return AugmentationSpec(self.kind, alpha, dict(self.params))

    def to_dict(self) -> dict:
        params = dict(self.params)
        if "maps" in params:
            params["maps"] = [np.asarray(m).tolist() for m in params["maps"]]
        return {"kind": self.kind, "alpha": int(self.alpha), "params": params}

    @classmethod
    def from_dict(cls, obj: dict) -> "AugmentationSpec":
        return cls(obj["kind"], int(obj.get("alpha", 1)), dict(obj.get("params", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "AugmentationSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class AugmentedDataset:
    x: np.ndarray
    y: np.ndarray
    alpha: int
    x_aug_stacked: np.ndarray
    delta: np.ndarray
    tol: float = DEFAULT_TOL

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def copy_block(self, k: int) -> np.ndarray:
        """Rows of the k-th block (k = 0 is the original data)."""
        n = self.n
        return self.x_aug_stacked[k * n:(k + 1) * n]

    def with_labels(self, y) -> "AugmentedDataset":
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.n:
            raise InvalidInputError(f"expected {self.n} labels, got {y.size}")
        return AugmentedDataset(self.x, y, self.alpha, self.x_aug_stacked, self.delta, self.tol)


def _augment_copy(x: np.ndarray, spec: AugmentationSpec, j: int, rng) -> np.ndarray:
    n, d = x.shape
    p = spec.params
    kind = spec.kind
    if kind == "IdentityCopies":
        return x.copy()
    if kind == "BlockScale":
        d_c1, d_e1 = int(p["d_c1"]), int(p["d_e1"])
        out = x.copy()
        out[:, d_c1:d_c1 + d_e1] *= p["scale_e1"]
        out[:, d_c1 + d_e1:] *= p["scale_e2"]
        return out
    if kind == "CoordinateResample":
        k = int(p["d_pert"])
        out = x.copy()
        if k:
            out[:, d - k:] = rng.standard_normal((n, k))
        return out
    if kind == "GaussianJitter":
        k = int(p["d_pert"])
        out = x.copy()
        if k:
            out[:, d - k:] += p["noise_std"] * rng.standard_normal((n, k))
        return out
    if kind == "LinearMaps":
        return x @ p["maps"][j].T
    if kind == "EnvSignFlip":
        k = int(p["env_dim"])
        out = x.copy()
        if k:
            out[:, d - k:] *= -1.0
        return out
    raise InvalidInputError(kind)  # pragma: no cover


def _check_dims(spec: AugmentationSpec, d: int):
    p = spec.params
    if spec.kind == "BlockScale":
        if p["d_c1"] < 0 or p["d_e1"] < 0 or p["d_c1"] + p["d_e1"] > d:
            raise InvalidInputError(f"BlockScale needs d_c1 + d_e1 <= d = {d}")
    elif spec.kind in ("CoordinateResample", "GaussianJitter"):
        if not 0 <= p["d_pert"] <= d:
            raise InvalidInputError(f"d_pert must lie in [0, {d}]")
    elif spec.kind == "EnvSignFlip":
        if not 0 <= p["env_dim"] <= d:
            raise InvalidInputError(f"env_dim must lie in [0, {d}]")
    elif spec.kind == "LinearMaps":
        if p["maps"][0].shape != (d, d):
            raise InvalidInputError(f"LinearMaps must be {d} x {d}")


def build_augmented(x, y, spec: AugmentationSpec, rng=None, tol: float = DEFAULT_TOL) -> AugmentedDataset:
    """Stack ``alpha`` augmentations of ``x`` under the original rows."""
    x = matkit.as_matrix(x, "x")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != x.shape[0]:
        raise InvalidInputError(f"x has {x.shape[0]} rows but y has {y.size} entries")
    _check_dims(spec, x.shape[1])
    rng = np.random.default_rng(rng)
    blocks = [x] + [_augment_copy(x, spec, j, rng) for j in range(spec.alpha)]
    stacked = np.vstack(blocks)
    delta = stacked - np.tile(x, (spec.alpha + 1, 1))
    return AugmentedDataset(x, y, spec.alpha, stacked, delta, tol)


def replicate_labels(aug: AugmentedDataset) -> np.ndarray:
    """M~ y: the labels repeated once per block, matching ``x_aug_stacked``."""
    return np.tile(aug.y, aug.alpha + 1)


def stack_operator(n: int, alpha: int) -> np.ndarray:
    """Explicit M~ = vertical stack of (1 + alpha) N x N identities."""
    return np.tile(np.eye(n), (alpha + 1, 1))


def d_aug_of(aug: AugmentedDataset) -> int:
    return matkit.rank_tol(aug.delta, aug.tol)


def d_aug_quantile(
    spec: AugmentationSpec,
    sampler: Callable,
    n: int,
    delta_prob: float,
    trials: int = 500,
    rng=None,
) -> int:
    """Monte Carlo version of the high-probability augmentation strength.

    Returns the largest integer k with  freq{rank(Delta) < k} <= delta_prob
    over ``trials`` independent draws of (X, augmentations). ``sampler(n, rng)``
    must return an ``n x d`` feature matrix (or an ``(X, y)`` pair). Trial t
    uses the substream ``SeedSequence([master, t])`` so the answer depends only
    on the master seed.
    """
    if not 0 < delta_prob < 1:
        raise InvalidInputError("delta_prob must lie in (0, 1)")
    if trials < 100:
        raise InvalidInputError("d_aug_quantile needs at least 100 trials")
    master = int(np.random.default_rng(rng).integers(2**63))
    ranks = []
    degenerate = True
    d = None
    for t in range(trials):
        sub = np.random.default_rng(np.random.SeedSequence([master, t]))
        out = sampler(n, sub)
        x = out[0] if isinstance(out, tuple) else out
        x = matkit.as_matrix(x, "sampler output")
        d = x.shape[1]
        if np.ptp(x) > 0:
            degenerate = False
        aug = build_augmented(x, np.zeros(x.shape[0]), spec, sub)
        ranks.append(d_aug_of(aug))
    if degenerate:
        warnings.warn("sampler produced constant features; d_aug quantile is 0",
                      DegenerateSamplerWarning, stacklevel=2)
        return 0
    ranks = np.asarray(ranks)
    best = 0
    for k in range(d + 1):
        if np.mean(ranks < k) <= delta_prob:
            best = k
        else:
            break
    return best


@dataclass(frozen=True)
class DPrime:
    value: float  # clamped to [0, d_aug]
    raw: float
    d_aug: int
    trace_full: float  # tr(M~^T P_A M~)
    trace_s: float  # tr(M~^T P_S M~)


class RankDeficientError(InvalidInputError):
    pass


def d_prime_details(aug: AugmentedDataset) -> DPrime:
    """Extra-variance dimension count of augmented ERM over hard consistency.

    P_A projects onto Col(A~(X)); S = Col(M~ X Q) with Q an orthonormal basis
    of Null(Delta). The value is tr(M~^T (P_A - P_S) M~) / (1 + alpha).
    """
    tol = aug.tol
    if matkit.rank_tol(aug.x_aug_stacked, tol) < aug.d:
        raise RankDeficientError("augmented design does not have full column rank")
    n, a1 = aug.n, aug.alpha + 1
    # tr(M~^T U U^T M~) = ||M~^T U||_F^2 and M~^T U sums the row blocks of U
    u_full = matkit.col_basis(aug.x_aug_stacked, tol)
    t_full = float(np.sum(u_full.reshape(a1, n, -1).sum(axis=0) ** 2))
    q = matkit.null_basis(aug.delta, tol)
    if q.shape[1]:
        s_mat = np.tile(aug.x @ q, (a1, 1))
        u_s = matkit.col_basis(s_mat, tol)
        t_s = float(np.sum(u_s.reshape(a1, n, -1).sum(axis=0) ** 2))
    else:
        t_s = 0.0
    raw = (t_full - t_s) / a1
    d_aug = d_aug_of(aug)
    return DPrime(float(np.clip(raw, 0.0, d_aug)), raw, d_aug, t_full, t_s)


def d_prime(aug: AugmentedDataset) -> float:
    return d_prime_details(aug).value
