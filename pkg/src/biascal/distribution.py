"""Per-instance posteriors, exponential reweighting, MAP prediction, KL.

All probability arithmetic runs in log space with max subtraction, so the
operations are stable for any finite score magnitudes. Probabilities are
materialized as float64 arrays summing to one. Instances are mutually
independent: the joint distribution over a corpus is the product of the
per-instance posteriors, and corpus-level reductions here always accumulate
in instance order so repeated runs are bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, rel_entr

from .corpus import Corpus, Instance
from .errors import DegenerateDistributionError, ValidationError

__all__ = [
    "InstancePosterior",
    "instance_posterior",
    "reweighted_posterior",
    "map_predict",
    "kl_divergence",
]


@dataclass(frozen=True, eq=False)
class InstancePosterior:
    """A probability vector aligned with one instance's candidate list."""

    instance_id: str
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValidationError(
                f"posterior for {self.instance_id!r} must be a nonempty 1-D vector"
            )
        if not np.all(np.isfinite(probs)):
            raise ValidationError(f"posterior for {self.instance_id!r} has non-finite entries")
        if np.any(probs < 0.0) or np.any(probs > 1.0 + 1e-12):
            raise ValidationError(f"posterior for {self.instance_id!r} has entries outside [0, 1]")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValidationError(
                f"posterior for {self.instance_id!r} sums to {probs.sum()!r}, expected 1"
            )
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InstancePosterior):
            return NotImplemented
        return self.instance_id == other.instance_id and np.array_equal(self.probs, other.probs)

    def __len__(self) -> int:
        return self.probs.size


def instance_posterior(instance: Instance) -> InstancePosterior:
    """Softmax of the candidate scores: probs[k] = exp(score_k - logsumexp(scores))."""
    scores = np.array([c.score for c in instance.candidates], dtype=np.float64)
    probs = np.exp(log_softmax(scores))
    probs /= probs.sum()
    return InstancePosterior(instance.id, probs)


def reweighted_posterior(
    instance: Instance, base: InstancePosterior, penalty: Sequence[float]
) -> InstancePosterior:
    """Reweight a posterior by exp(-penalty) per candidate and renormalize.

    ``penalty[k]`` is the precomputed inner product of the dual vector with
    candidate k's constraint features. Computed in log space; zero-mass
    candidates stay at zero for any finite penalty.
    """
    penalty = np.asarray(penalty, dtype=np.float64)
    if penalty.shape != base.probs.shape:
        raise ValidationError(
            f"instance {instance.id!r}: penalty length {penalty.size} does not match "
            f"{base.probs.size} candidates"
        )
    if not np.all(np.isfinite(penalty)):
        raise ValidationError(f"instance {instance.id!r}: penalty entries must be finite")
    with np.errstate(divide="ignore"):
        log_q = np.log(base.probs) - penalty
    shift = log_q.max()
    if not np.isfinite(shift):
        raise DegenerateDistributionError(
            f"instance {instance.id!r}: reweighting left no mass on the support"
        )
    weights = np.exp(log_q - shift)
    probs = weights / weights.sum()
    return InstancePosterior(instance.id, probs)


def map_predict(posterior: InstancePosterior) -> int:
    """Index of the most probable candidate; ties break toward the lowest index."""
    return int(np.argmax(posterior.probs))


def _check_aligned(q: Sequence[InstancePosterior], p: Sequence[InstancePosterior]) -> None:
    if len(q) != len(p):
        raise ValidationError(f"posterior lists differ in length: {len(q)} vs {len(p)}")
    for qi, pi in zip(q, p):
        if qi.instance_id != pi.instance_id:
            raise ValidationError(
                f"posterior lists misaligned: {qi.instance_id!r} vs {pi.instance_id!r}"
            )
        if len(qi) != len(pi):
            raise ValidationError(
                f"instance {qi.instance_id!r}: posterior lengths differ ({len(qi)} vs {len(pi)})"
            )


def kl_divergence(q: Sequence[InstancePosterior], p: Sequence[InstancePosterior]) -> float:
    """KL(q || p) summed over instances, with the 0 log 0 = 0 convention.

    Returns inf when q puts mass where p has none (q not absolutely
    continuous w.r.t. p on the candidate support).
    """
    _check_aligned(q, p)
    total = 0.0
    for qi, pi in zip(q, p):
        total += float(rel_entr(qi.probs, pi.probs).sum())
    return total


def check_posteriors(corpus: Corpus, posteriors: Sequence[InstancePosterior]) -> None:
    """Validate that a posterior list is aligned with a corpus, instance by instance."""
    if len(posteriors) != len(corpus.instances):
        raise ValidationError(
            f"{len(posteriors)} posteriors for {len(corpus.instances)} instances"
        )
    for inst, post in zip(corpus.instances, posteriors):
        if post.instance_id != inst.id:
            raise ValidationError(
                f"posterior {post.instance_id!r} does not match instance {inst.id!r}"
            )
        if len(post) != len(inst.candidates):
            raise ValidationError(
                f"instance {inst.id!r}: {len(post)} probabilities for "
                f"{len(inst.candidates)} candidates"
            )
