"""Corpus-level gender-ratio constraints as expectation features.

Each constrained activity contributes a pair of coordinates to a 2n-
dimensional feature vector, one per inequality side. For an activity with
training male ratio ``r`` and margin ``g``, a gendered candidate of that
activity takes

    ==========  ================  ================
    coordinate  male candidate    female candidate
    ==========  ================  ================
    2j (upper)  1 - r - g         -r - g
    2j+1 (lower) -1 + r - g       r - g
    ==========  ================  ================

and every other candidate is zero there. Summed over the corpus, a
posterior q then satisfies E_q[feature] <= 0 on the pair exactly when the
corpus-level male ratio of the activity under q lies within [r - g, r + g];
`check_equivalence` verifies that identity numerically. Feature values
depend only on the candidate and the constraint set, never on q.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import CandidateStructure, Corpus, GenderTag, TrainingStats, constrained_activities
from .distribution import InstancePosterior, check_posteriors
from .errors import UndefinedBiasError, ValidationError
from .metrics import dataset_bias

__all__ = [
    "ConstraintSet",
    "feature_vector",
    "instance_expectation",
    "corpus_expectation",
    "check_equivalence",
    "EquivalenceCheck",
]


@dataclass(frozen=True)
class ConstraintSet:
    """The 2n-dimensional constraint family over an ordered activity list.

    ``activity_ids`` must be strictly increasing; activity j in that order
    owns coordinates 2j (upper ratio bound) and 2j+1 (lower ratio bound).
    The constraint threshold vector is fixed at zero, so the margin is baked
    into the feature values themselves.
    """

    activity_ids: tuple[int, ...]
    b_star: np.ndarray
    gamma: float

    def __post_init__(self):
        ids = tuple(int(a) for a in self.activity_ids)
        b_star = np.asarray(self.b_star, dtype=np.float64)
        if any(b <= a for a, b in zip(ids, ids[1:])) or (ids and ids[0] < 0):
            raise ValidationError("activity_ids must be strictly increasing and nonnegative")
        if b_star.shape != (len(ids),):
            raise ValidationError(
                f"b_star has shape {b_star.shape}, expected ({len(ids)},)"
            )
        if b_star.size and (np.any(b_star < 0.0) or np.any(b_star > 1.0)):
            raise ValidationError("b_star entries must lie in [0, 1]")
        if not np.isfinite(self.gamma) or self.gamma < 0.0:
            raise ValidationError(f"gamma must be a finite nonnegative real, got {self.gamma}")
        b_star.flags.writeable = False
        object.__setattr__(self, "activity_ids", ids)
        object.__setattr__(self, "b_star", b_star)
        object.__setattr__(self, "_slot", {aid: j for j, aid in enumerate(ids)})

    @classmethod
    def from_stats(cls, corpus: Corpus, stats: TrainingStats, gamma: float) -> "ConstraintSet":
        """Build constraints for every activity eligible under the given corpus."""
        ids = constrained_activities(stats, corpus)
        b_star = np.array(
            [dataset_bias(stats, corpus, aid) for aid in ids], dtype=np.float64
        )
        return cls(tuple(ids), b_star, gamma)

    @property
    def n_constraints(self) -> int:
        return len(self.activity_ids)

    @property
    def dimension(self) -> int:
        return 2 * len(self.activity_ids)

    def slot(self, activity_id: int) -> int | None:
        """Position of an activity in the constraint order, or None if unconstrained."""
        return self._slot.get(activity_id)


def feature_vector(
    candidate: CandidateStructure, cs: ConstraintSet
) -> list[tuple[int, float]]:
    """Sparse constraint features of one candidate: (coordinate, value) pairs.

    Empty for ungendered candidates and for activities outside the
    constraint set; otherwise exactly the two coordinates of the
    candidate's activity.
    """
    j = cs.slot(candidate.activity_id)
    if j is None or not candidate.gender.is_gendered:
        return []
    r = float(cs.b_star[j])
    g = cs.gamma
    if candidate.gender is GenderTag.MALE:
        return [(2 * j, 1.0 - r - g), (2 * j + 1, -1.0 + r - g)]
    return [(2 * j, -r - g), (2 * j + 1, r - g)]


def instance_expectation(
    instance, posterior: InstancePosterior, cs: ConstraintSet
) -> np.ndarray:
    """Expected feature vector of one instance under its posterior (dense 2n)."""
    out = np.zeros(cs.dimension)
    for prob, cand in zip(posterior.probs, instance.candidates):
        for idx, value in feature_vector(cand, cs):
            out[idx] += prob * value
    return out


def corpus_expectation(
    corpus: Corpus, posteriors: Sequence[InstancePosterior], cs: ConstraintSet
) -> np.ndarray:
    """Sum of instance expectations over the corpus, in instance order."""
    check_posteriors(corpus, posteriors)
    out = np.zeros(cs.dimension)
    for inst, post in zip(corpus.instances, posteriors):
        out += instance_expectation(inst, post, cs)
    return out


class EquivalenceCheck(NamedTuple):
    """Agreement between expectation-side and ratio-side constraint tests.

    ``residual_minus`` is ratio - (b_star + gamma); positive means the upper
    bound is violated. ``residual_plus`` is (b_star - gamma) - ratio;
    positive means the lower bound is violated. The ok flags report whether
    each expectation coordinate matches its residual after clearing the
    (positive) gendered-mass denominator, to 1e-9.
    """

    minus_ok: bool
    plus_ok: bool
    residual_minus: float
    residual_plus: float


def check_equivalence(
    corpus: Corpus,
    posteriors: Sequence[InstancePosterior],
    cs: ConstraintSet,
    activity_id: int,
    slack: float = 1e-9,
) -> EquivalenceCheck:
    """Verify that the two feature expectations encode the ratio bounds.

    For activity j the identity is

        E[feature_2j]   = (ratio - (b* + gamma)) * gendered_mass
        E[feature_2j+1] = ((b* - gamma) - ratio) * gendered_mass

    so each expectation is <= 0 exactly when the corresponding ratio bound
    holds. Requires positive gendered mass on the activity.
    """
    j = cs.slot(activity_id)
    if j is None:
        raise ValidationError(f"activity id {activity_id} is not constrained")
    male_mass = 0.0
    gendered_mass = 0.0
    for inst, post in zip(corpus.instances, posteriors):
        for prob, cand in zip(post.probs, inst.candidates):
            if cand.activity_id != activity_id or not cand.gender.is_gendered:
                continue
            gendered_mass += float(prob)
            if cand.gender is GenderTag.MALE:
                male_mass += float(prob)
    if gendered_mass <= 0.0:
        raise UndefinedBiasError(
            f"activity {corpus.activity_name(activity_id)!r} has no gendered mass"
        )
    ratio = male_mass / gendered_mass
    r = float(cs.b_star[j])
    expectation = corpus_expectation(corpus, posteriors, cs)
    residual_minus = ratio - (r + cs.gamma)
    residual_plus = (r - cs.gamma) - ratio
    minus_ok = abs(expectation[2 * j] - residual_minus * gendered_mass) <= slack
    plus_ok = abs(expectation[2 * j + 1] - residual_plus * gendered_mass) <= slack
    return EquivalenceCheck(bool(minus_ok), bool(plus_ok), residual_minus, residual_plus)
