"""Bias ratios, amplification scores, and the corpus-level bias report.

The bias of an activity is the male share of its gendered probability mass
(or of its gendered top predictions). Amplification orients the deviation
from the training ratio toward the training-majority gender, so positive
values always mean "further toward the already dominant gender".
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .corpus import Corpus, GenderTag, TrainingStats, constrained_activities
from .distribution import InstancePosterior, check_posteriors
from .errors import UndefinedBiasError, ValidationError

__all__ = [
    "ActivityBias",
    "BiasReport",
    "dataset_bias",
    "bias_in_distribution",
    "bias_in_top_predictions",
    "amplification",
    "mean_amplification",
    "build_report",
]

SCATTER_COLUMNS = ("activity", "b_star", "bias_dist", "bias_top", "violated_dist", "violated_top")


def dataset_bias(stats: TrainingStats, corpus: Corpus, activity_id: int) -> float:
    """Male share of the gendered training labels for one activity."""
    name = corpus.activity_name(activity_id)
    count = stats.counts.get(name)
    if count is None or count.total == 0:
        raise UndefinedBiasError(f"activity {name!r} has no gendered training labels")
    return count.male / count.total


def _activity_mass(
    posteriors: Sequence[InstancePosterior], corpus: Corpus, activity_id: int
) -> tuple[float, float]:
    male = 0.0
    gendered = 0.0
    for inst, post in zip(corpus.instances, posteriors):
        for prob, cand in zip(post.probs, inst.candidates):
            if cand.activity_id != activity_id or not cand.gender.is_gendered:
                continue
            gendered += float(prob)
            if cand.gender is GenderTag.MALE:
                male += float(prob)
    return male, gendered


def bias_in_distribution(
    posteriors: Sequence[InstancePosterior], corpus: Corpus, activity_id: int
) -> float:
    """Male share of the activity's gendered posterior mass across the corpus.

    Ungendered candidates contribute to neither numerator nor denominator.
    """
    check_posteriors(corpus, posteriors)
    male, gendered = _activity_mass(posteriors, corpus, activity_id)
    if gendered <= 0.0:
        raise UndefinedBiasError(
            f"activity {corpus.activity_name(activity_id)!r} has no gendered posterior mass"
        )
    return male / gendered


def bias_in_top_predictions(
    predictions: Sequence[int], corpus: Corpus, activity_id: int
) -> float | None:
    """Male share among gendered MAP predictions of the activity.

    Returns None when no instance has a gendered MAP prediction of this
    activity (the ratio is then not evaluable, as opposed to an error).
    """
    if len(predictions) != len(corpus.instances):
        raise ValidationError(
            f"{len(predictions)} predictions for {len(corpus.instances)} instances"
        )
    male = 0
    gendered = 0
    for inst, k in zip(corpus.instances, predictions):
        cand = inst.candidates[k]
        if cand.activity_id != activity_id or not cand.gender.is_gendered:
            continue
        gendered += 1
        if cand.gender is GenderTag.MALE:
            male += 1
    if gendered == 0:
        return None
    return male / gendered


def amplification(bias: float, b_star: float) -> float:
    """Deviation of bias from b_star, signed toward the training majority.

    sgn(b_star - 0.5) * (bias - b_star), with sgn(0) = 0 so activities whose
    training ratio is exactly balanced contribute nothing.
    """
    return float(np.sign(b_star - 0.5) * (bias - b_star))


def mean_amplification(amplifications: Iterable[float]) -> float:
    """Arithmetic mean over the constrained activity set; errors when empty."""
    values = list(amplifications)
    if not values:
        raise UndefinedBiasError("mean amplification over an empty activity set")
    return float(np.mean(values))


@dataclass(frozen=True)
class ActivityBias:
    """Per-activity row of a bias report; top fields are None when not evaluable."""

    activity_id: int
    activity: str
    b_star: float
    bias_dist: float
    bias_top: float | None
    amp_dist: float
    amp_top: float | None
    violated_dist: bool
    violated_top: bool


@dataclass(frozen=True)
class BiasReport:
    """Corpus-level bias summary over the constrained activities."""

    entries: tuple[ActivityBias, ...]
    gamma_eval: float
    mean_amp_dist: float
    mean_amp_top: float | None
    n_violations_dist: int
    n_violations_top: int
    n_not_evaluable_top: int
    n_bstar_at_half: int
    accuracy: float | None

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "gamma_eval": self.gamma_eval,
            "activities": [
                {
                    "activity": e.activity,
                    "activity_id": e.activity_id,
                    "b_star": e.b_star,
                    "bias_dist": e.bias_dist,
                    "bias_top": e.bias_top,
                    "amp_dist": e.amp_dist,
                    "amp_top": e.amp_top,
                    "violated_dist": e.violated_dist,
                    "violated_top": e.violated_top,
                }
                for e in self.entries
            ],
            "mean_amp_dist": self.mean_amp_dist,
            "mean_amp_top": self.mean_amp_top,
            "n_violations_dist": self.n_violations_dist,
            "n_violations_top": self.n_violations_top,
            "n_not_evaluable_top": self.n_not_evaluable_top,
            "n_bstar_at_half": self.n_bstar_at_half,
            "accuracy": self.accuracy,
        }

    def write_json(self, sink: IO[str]) -> None:
        json.dump(self.to_json_dict(), sink, indent=2)
        sink.write("\n")

    def write_scatter_csv(self, sink: IO[str]) -> None:
        """Per-activity (training bias, predicted bias) pairs for scatter plots."""
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(SCATTER_COLUMNS)
        for e in self.entries:
            writer.writerow(
                [
                    e.activity,
                    repr(e.b_star),
                    repr(e.bias_dist),
                    "" if e.bias_top is None else repr(e.bias_top),
                    "true" if e.violated_dist else "false",
                    "true" if e.violated_top else "false",
                ]
            )


def build_report(
    corpus: Corpus,
    stats: TrainingStats,
    posteriors: Sequence[InstancePosterior],
    predictions: Sequence[int],
    gamma_eval: float,
) -> BiasReport:
    """Assemble the full bias report at evaluation margin gamma_eval.

    Activities without a gendered MAP prediction are excluded from the top
    mean and violation count; their number is reported. Accuracy is the
    gold-match rate of the MAP predictions, present only when every
    instance carries a gold label.
    """
    check_posteriors(corpus, posteriors)
    activity_ids = constrained_activities(stats, corpus)
    if not activity_ids:
        raise UndefinedBiasError("no constrained activities")

    entries = []
    for aid in activity_ids:
        b_star = dataset_bias(stats, corpus, aid)
        bias_dist = bias_in_distribution(posteriors, corpus, aid)
        bias_top = bias_in_top_predictions(predictions, corpus, aid)
        amp_dist = amplification(bias_dist, b_star)
        amp_top = None if bias_top is None else amplification(bias_top, b_star)
        entries.append(
            ActivityBias(
                activity_id=aid,
                activity=corpus.activity_name(aid),
                b_star=b_star,
                bias_dist=bias_dist,
                bias_top=bias_top,
                amp_dist=amp_dist,
                amp_top=amp_top,
                violated_dist=bool(abs(amp_dist) > gamma_eval),
                violated_top=bool(amp_top is not None and abs(amp_top) > gamma_eval),
            )
        )

    top_amps = [e.amp_top for e in entries if e.amp_top is not None]
    accuracy = None
    if all(inst.gold is not None for inst in corpus.instances):
        hits = sum(1 for inst, k in zip(corpus.instances, predictions) if k == inst.gold)
        accuracy = hits / len(corpus.instances)

    return BiasReport(
        entries=tuple(entries),
        gamma_eval=gamma_eval,
        mean_amp_dist=mean_amplification(e.amp_dist for e in entries),
        mean_amp_top=mean_amplification(top_amps) if top_amps else None,
        n_violations_dist=sum(e.violated_dist for e in entries),
        n_violations_top=sum(e.violated_top for e in entries),
        n_not_evaluable_top=sum(e.bias_top is None for e in entries),
        n_bstar_at_half=sum(e.b_star == 0.5 for e in entries),
        accuracy=accuracy,
    )
