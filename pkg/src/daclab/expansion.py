"""Exact checks of expansion properties and the minority-set bound on finite spaces.

Subsets are bitmasks over point indices. For up to ``MAX_EXHAUSTIVE`` points the
neighborhood and mass of every subset are tabulated with a doubling recurrence
(row ``2^b + m`` extends subset ``m`` by point ``b``), so a full scan costs a
few vectorized passes over 2^n entries.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .matkit import InvalidInputError

MAX_EXHAUSTIVE = 22
SLACK = 1e-12


class EnumerationLimitError(InvalidInputError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """Finite probability space with class labels and an augmentation map A."""

    points: tuple
    prob: np.ndarray
    class_of: tuple
    aug_sets: tuple

    def __post_init__(self):
        points = tuple(self.points)
        if len(set(points)) != len(points):
            raise InvalidInputError("point ids must be unique")
        index = {p: i for i, p in enumerate(points)}
        prob = np.asarray(self.prob, dtype=float).reshape(-1)
        n = len(points)
        if prob.size != n or len(self.class_of) != n or len(self.aug_sets) != n:
            raise InvalidInputError("prob, class_of and aug_sets must have one entry per point")
        if np.any(prob <= 0) or not np.all(np.isfinite(prob)):
            raise InvalidInputError("probabilities must be positive and finite")
        if abs(prob.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"probabilities sum to {prob.sum()!r}, not 1")
        class_of = tuple(int(k) for k in self.class_of)
        aug = []
        for i, a in enumerate(self.aug_sets):
            try:
                idx = frozenset(index[p] for p in a)
            except KeyError as exc:
                raise InvalidInputError(f"unknown point {exc.args[0]!r} in aug_sets") from None
            if i not in idx:
                raise InvalidInputError(f"point {points[i]!r} is missing from its own augmentation set")
            if any(class_of[j] != class_of[i] for j in idx):
                raise InvalidInputError(f"augmentations of {points[i]!r} cross classes")
            aug.append(idx)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "class_of", class_of)
        object.__setattr__(self, "aug_sets", tuple(aug))
        object.__setattr__(self, "_index", index)

    def __eq__(self, other):
        return isinstance(other, FiniteSpace) and self.to_dict() == other.to_dict()

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def classes(self) -> list:
        return sorted(set(self.class_of))

    @property
    def strict(self) -> bool:
        """True when every A(x) strictly contains x, as the definition requires."""
        return all(len(a) > 1 for a in self.aug_sets)

    def indices(self, s) -> list:
        try:
            return sorted({self._index[p] for p in s})
        except KeyError as exc:
            raise InvalidInputError(f"unknown point {exc.args[0]!r}") from None

    def ids(self, idx) -> frozenset:
        return frozenset(self.points[i] for i in idx)

    def mass(self, s) -> float:
        return float(self.prob[self.indices(s)].sum())

    def class_members(self, k) -> list:
        return [i for i, c in enumerate(self.class_of) if c == k]

    def neighbor_lists(self) -> list:
        """nbr[i] = {j : A(i) and A(j) intersect}."""
        holders = {}
        for j, a in enumerate(self.aug_sets):
            for x in a:
                holders.setdefault(x, set()).add(j)
        return [sorted(set().union(*(holders[x] for x in a))) for a in self.aug_sets]

    def to_dict(self) -> dict:
        pts = list(self.points)
        return {
            "points": pts,
            "prob": self.prob.tolist(),
            "class_of": list(self.class_of),
            "aug_sets": [[pts[j] for j in sorted(a)] for a in self.aug_sets],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "FiniteSpace":
        return cls(tuple(obj["points"]), obj["prob"], tuple(obj["class_of"]),
                   tuple(tuple(a) for a in obj["aug_sets"]))

    @classmethod
    def from_json(cls, text: str) -> "FiniteSpace":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ClassifierTable:
    h: dict

    def __call__(self, point):
        return self.h[point]

    def check_total(self, space: FiniteSpace):
        missing = [p for p in space.points if p not in self.h]
        if missing:
            raise InvalidInputError(f"classifier undefined on {missing[:3]}")
        return self

    def labels(self, space: FiniteSpace) -> np.ndarray:
        self.check_total(space)
        return np.array([self.h[p] for p in space.points])

    @classmethod
    def ground_truth(cls, space: FiniteSpace) -> "ClassifierTable":
        return cls(dict(zip(space.points, space.class_of)))


def neighborhood(space: FiniteSpace, s) -> frozenset:
    """NB(S): all x' whose augmentation set meets A(x) for some x in S."""
    nbr = space.neighbor_lists()
    out = set()
    for i in space.indices(s):
        out.update(nbr[i])
    return space.ids(out)


# subset tables -----------------------------------------------------------------

def _tables(prob: np.ndarray, nbr_masks: list):
    n = len(nbr_masks)
    size = 1 << n
    nb = np.zeros(size, dtype=np.uint32)
    mass = np.zeros(size)
    for b in range(n):
        lo, hi = 1 << b, 1 << (b + 1)
        nb[lo:hi] = nb[:lo] | np.uint32(nbr_masks[b])
        mass[lo:hi] = mass[:lo] + prob[b]
    return nb, mass


def _local_masks(space: FiniteSpace, members: list):
    pos = {g: l for l, g in enumerate(members)}
    nbr = space.neighbor_lists()
    masks = []
    for g in members:
        m = 0
        for j in nbr[g]:
            if j in pos:
                m |= 1 << pos[j]
        masks.append(m)
    return masks


def _mask_to_ids(space, members, mask) -> frozenset:
    return space.ids(members[b] for b in range(len(members)) if (int(mask) >> b) & 1)


def _sample_masks(n: int, samples: int, rng) -> np.ndarray:
    # random subset sizes, then random members, so that small and large sets both appear
    rng = np.random.default_rng(rng)
    sizes = rng.integers(1, n + 1, size=samples)
    keys = rng.random((samples, n))
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    return ranks < sizes[:, None]


@dataclass(frozen=True)
class ExpansionCheck:
    holds: bool
    witness: Optional[object] = None
    exhaustive: bool = True
    checked: int = 0

    def __iter__(self):
        # unpacks as (holds, witness)
        return iter((self.holds, self.witness))


def check_constant_expansion(space: FiniteSpace, q: float, xi: float, mode: str = "exhaustive",
                             samples: int = 10_000, rng=None) -> ExpansionCheck:
    """(q, xi)-constant expansion: P(NB(S)) >= min(P(S), xi) + P(S) for every S
    with P(S) >= q and P(S & X_k) <= 1/2 for all classes k."""
    n = space.n
    cls_masks = [sum(1 << i for i in space.class_members(k)) for k in space.classes]
    if mode == "exhaustive":
        if n > MAX_EXHAUSTIVE:
            raise EnumerationLimitError(f"{n} points exceed the exhaustive limit {MAX_EXHAUSTIVE}")
        members = list(range(n))
        nb, mass = _tables(space.prob, _local_masks(space, members))
        s = np.arange(1 << n, dtype=np.uint32)
        ok = mass >= q - SLACK
        for cm in cls_masks:
            ok &= mass[s & np.uint32(cm)] <= 0.5 + SLACK
        bad = ok & (mass[nb] < np.minimum(mass, xi) + mass - SLACK)
        hits = np.flatnonzero(bad)
        if hits.size:
            return ExpansionCheck(False, _mask_to_ids(space, members, hits[0]), True, 1 << n)
        return ExpansionCheck(True, None, True, 1 << n)
    if mode != "sampled":
        raise InvalidInputError(f"unknown mode {mode!r}")
    if samples < 10_000:
        raise InvalidInputError("sampled mode needs at least 10^4 subsets")
    nbr = space.neighbor_lists()
    for row in _sample_masks(n, samples, rng):
        idx = np.flatnonzero(row)
        p_s = space.prob[idx].sum()
        if p_s < q - SLACK:
            continue
        if any(space.prob[[i for i in idx if space.class_of[i] == k]].sum() > 0.5 + SLACK
               for k in space.classes):
            continue
        nb_idx = sorted(set().union(*(nbr[i] for i in idx)))
        if space.prob[nb_idx].sum() < min(p_s, xi) + p_s - SLACK:
            return ExpansionCheck(False, space.ids(idx), False, samples)
    return ExpansionCheck(True, None, False, samples)


def _class_tables(space: FiniteSpace, k):
    members = space.class_members(k)
    if len(members) > MAX_EXHAUSTIVE:
        raise EnumerationLimitError(
            f"class {k} has {len(members)} points, above the limit {MAX_EXHAUSTIVE}")
    nb, mass = _tables(space.prob[members], _local_masks(space, members))
    return members, nb, mass


def check_multiplicative_expansion(space: FiniteSpace, a: float, c: float) -> ExpansionCheck:
    """(a, c)-multiplicative expansion: for every class k and every S with
    P(S & X_k) <= a, P(NB(S) & X_k) >= min(c P(S & X_k), 1).

    Augmentations never leave a class, so it suffices to scan subsets of each
    class separately; probabilities are absolute (not class-conditional).
    """
    checked = 0
    for k in space.classes:
        members, nb, mass = _class_tables(space, k)
        ok = mass <= a + SLACK
        bad = ok & (mass[nb] < np.minimum(c * mass, 1.0) - SLACK)
        checked += mass.size
        hits = np.flatnonzero(bad)
        if hits.size:
            return ExpansionCheck(False, (k, _mask_to_ids(space, members, hits[0])), True, checked)
    return ExpansionCheck(True, None, True, checked)


def multiplicative_c_exact(space: FiniteSpace, a: float = 0.5) -> float:
    """Largest c for which (a, c)-multiplicative expansion holds (inf if unconstrained)."""
    best = np.inf
    for k in space.classes:
        _, nb, mass = _class_tables(space, k)
        nb_mass = mass[nb]
        sel = (mass > 0) & (mass <= a + SLACK) & (nb_mass < 1.0 - SLACK)
        if np.any(sel):
            best = min(best, float(np.min(nb_mass[sel] / mass[sel])))
    return best


def max_multiplicative_c(space: FiniteSpace, a: float = 0.5, hi: float = 64.0, tol: float = 1e-9) -> float:
    """Bisection on c against :func:`check_multiplicative_expansion`.

    Expansion is monotone in c (a larger c is harder), so the feasible set is an
    interval [0, c_max]; returns ``hi`` if even ``hi`` is feasible.
    """
    lo = 0.0
    if check_multiplicative_expansion(space, a, hi).holds:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if check_multiplicative_expansion(space, a, mid).holds:
            lo = mid
        else:
            hi = mid
    return lo


# minority sets and the minority-mass bound ----------------------------------------

@dataclass(frozen=True)
class MinorityResult:
    m: frozenset
    p_m: float
    majority: dict

    def __iter__(self):
        return iter((self.m, self.p_m, self.majority))


def minority_set(space: FiniteSpace, h: ClassifierTable) -> MinorityResult:
    """Points labelled differently from the mass-weighted majority label of their class.

    Ties go to the smallest label.
    """
    labels = h.labels(space)
    majority = {}
    minority = []
    for k in space.classes:
        members = space.class_members(k)
        votes = {}
        for i in members:
            votes[labels[i]] = votes.get(labels[i], 0.0) + space.prob[i]
        top = max(votes.values())
        maj = min(lbl for lbl, v in votes.items() if v >= top - SLACK)
        majority[k] = maj
        minority.extend(i for i in members if labels[i] != maj)
    return MinorityResult(space.ids(minority), min(float(space.prob[minority].sum()), 1.0), majority)


def mu_of(space: FiniteSpace, h: ClassifierTable) -> float:
    """Mass of points with some augmentation that receives a different label."""
    labels = h.labels(space)
    bad = [i for i, a in enumerate(space.aug_sets) if any(labels[j] != labels[i] for j in a)]
    return min(float(space.prob[bad].sum()), 1.0)


@dataclass
class BranchResult:
    applicable: bool
    passed: Optional[bool]
    bound: Optional[float] = None
    reason: str = ""


@dataclass
class LemmaReport:
    mu: float
    p_m: float
    q: float
    c: float
    constant_branch: BranchResult
    multiplicative_branch: BranchResult
    small_mu_premise: bool
    strict_augmentation: bool
    minority: list = field(default_factory=list)

    @property
    def violated(self) -> bool:
        return any(b.applicable and b.passed is False
                   for b in (self.constant_branch, self.multiplicative_branch))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["c"] = None if not np.isfinite(self.c) else self.c
        return out


def verify_lemma_c3(space: FiniteSpace, h: ClassifierTable, q: float, c: Optional[float] = None) -> LemmaReport:
    """Evaluate both branches of the minority-set bound on one instance.

    (a) q < 1/2 and (q, 2 mu)-constant expansion  =>  P(M) <= max(q, 2 mu).
    (b) (1/2, c)-multiplicative expansion with c > 1 + 4 mu  =>  P(M) <= max(2 mu/(c-1), 2 mu).
    ``c=None`` uses the largest c for which (b)'s expansion premise holds.
    """
    mu = mu_of(space, h)
    mres = minority_set(space, h)
    p_m = mres.p_m

    if q >= 0.5:
        branch_a = BranchResult(False, None, None, "q must be below 1/2")
    elif not check_constant_expansion(space, q, 2 * mu).holds:
        branch_a = BranchResult(False, None, None, "constant expansion premise fails")
    else:
        bound = max(q, 2 * mu)
        branch_a = BranchResult(True, p_m <= bound + SLACK, bound)

    if c is None:
        c = multiplicative_c_exact(space, 0.5)
    if not c > 1 + 4 * mu:
        branch_b = BranchResult(False, None, None, "c <= 1 + 4 mu")
    elif np.isfinite(c) and not check_multiplicative_expansion(space, 0.5, c).holds:
        branch_b = BranchResult(False, None, None, "multiplicative expansion premise fails")
    else:
        bound = max(2 * mu / (c - 1), 2 * mu)
        branch_b = BranchResult(True, p_m <= bound + SLACK, bound)

    return LemmaReport(
        mu=mu, p_m=p_m, q=q, c=float(c),
        constant_branch=branch_a, multiplicative_branch=branch_b,
        small_mu_premise=bool(mu <= (c - 1) / 4),
        strict_augmentation=space.strict,
        minority=sorted(mres.m, key=str),
    )


def random_space(rng, n_min: int = 4, n_max: int = 12, n_classes: int = 2,
                 extra_prob: float = 0.3) -> FiniteSpace:
    """Random finite space with chain augmentations inside each class.

    Within a class listed in random order, A(x_i) = {x_i, x_{i+1}} (the last
    point links back to its predecessor); every other same-class point is added
    to A(x) with probability ``extra_prob``. Every class gets at least 2 points.
    """
    rng = np.random.default_rng(rng)
    n = int(rng.integers(max(n_min, 2 * n_classes), n_max + 1))
    labels = np.concatenate([np.repeat(np.arange(n_classes), 2),
                             rng.integers(0, n_classes, n - 2 * n_classes)])
    rng.shuffle(labels)
    prob = rng.dirichlet(np.ones(n))
    prob = prob / prob.sum()
    aug = [set([i]) for i in range(n)]
    for k in range(n_classes):
        members = list(rng.permutation(np.flatnonzero(labels == k)))
        for pos, i in enumerate(members):
            nxt = members[pos + 1] if pos + 1 < len(members) else members[pos - 1]
            aug[i].add(nxt)
            for j in members:
                if j != i and rng.random() < extra_prob:
                    aug[i].add(j)
    points = tuple(range(n))
    return FiniteSpace(points, prob, tuple(int(v) for v in labels),
                       tuple(tuple(sorted(int(j) for j in a)) for a in aug))


def random_classifier(space: FiniteSpace, rng, flip_prob: float = 0.25, n_labels: Optional[int] = None) -> ClassifierTable:
    """Ground truth with each label independently replaced by a random one w.p. ``flip_prob``."""
    rng = np.random.default_rng(rng)
    k = n_labels or (max(space.class_of) + 1)
    h = {}
    for p, lbl in zip(space.points, space.class_of):
        h[p] = int(rng.integers(0, k)) if rng.random() < flip_prob else lbl
    return ClassifierTable(h)
