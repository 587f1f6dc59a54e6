"""Data model for scored candidate corpora and training-label statistics.

File formats
------------

Corpus: JSONL, one instance per line::

    {"id": "img_001", "gold": 0,
     "candidates": [{"activity": "cooking", "gender": "M", "score": 1.25}]}

``gold`` is an optional index into ``candidates``. ``gender`` is ``"M"``,
``"W"``, or ``"-"`` (no gendered role). Scores are unnormalized
log-potentials on the model's own scale; the candidate list is treated as
the full support of the instance. All floats are parsed as 64-bit.

Training stats: a JSON object mapping activity name to gendered label
counts::

    {"cooking": {"male": 30, "female": 70}}

Activity ids are assigned in order of first appearance in the corpus file.
All loaded objects are immutable and safe for concurrent read access.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import IO, NamedTuple

from .errors import CorpusFormatError, ValidationError

__all__ = [
    "GenderTag",
    "CandidateStructure",
    "Instance",
    "Corpus",
    "GenderCount",
    "TrainingStats",
    "load_corpus",
    "dump_corpus",
    "load_training_stats",
    "dump_training_stats",
    "constrained_activities",
    "excluded_activities",
]


class GenderTag(str, Enum):
    """Gender attribute of one candidate structure.

    Ungendered structures never contribute to any bias numerator or
    denominator.
    """

    MALE = "M"
    FEMALE = "W"
    UNGENDERED = "-"

    @property
    def is_gendered(self) -> bool:
        return self is not GenderTag.UNGENDERED


@dataclass(frozen=True)
class CandidateStructure:
    """One scored joint assignment (activity, gender tag) for an instance."""

    activity_id: int
    gender: GenderTag
    score: float

    def __post_init__(self):
        if not isinstance(self.gender, GenderTag):
            raise ValidationError(f"gender must be a GenderTag, got {self.gender!r}")
        if not math.isfinite(self.score):
            raise ValidationError(f"candidate score must be finite, got {self.score!r}")
        if self.activity_id < 0:
            raise ValidationError(f"activity_id must be nonnegative, got {self.activity_id}")


@dataclass(frozen=True)
class Instance:
    """One test instance with its enumerated candidate list.

    ``gold``, when present, is an index into ``candidates``.
    """

    id: str
    candidates: tuple[CandidateStructure, ...]
    gold: int | None = None

    def __post_init__(self):
        if len(self.candidates) == 0:
            raise ValidationError(f"instance {self.id!r}: candidate list is empty")
        if self.gold is not None and not (0 <= self.gold < len(self.candidates)):
            raise ValidationError(
                f"instance {self.id!r}: gold index {self.gold} out of range "
                f"for {len(self.candidates)} candidates"
            )


@dataclass(frozen=True)
class Corpus:
    """An immutable set of instances plus the activity vocabulary (name -> id)."""

    instances: tuple[Instance, ...]
    activities: dict[str, int]

    def __post_init__(self):
        n = len(self.activities)
        ids = sorted(self.activities.values())
        if ids != list(range(n)):
            raise ValidationError("activity ids must be exactly 0..n-1")
        seen: set[str] = set()
        for inst in self.instances:
            if inst.id in seen:
                raise ValidationError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)
            for cand in inst.candidates:
                if cand.activity_id >= n:
                    raise ValidationError(
                        f"instance {inst.id!r}: activity_id {cand.activity_id} "
                        f"not in vocabulary of size {n}"
                    )

    @cached_property
    def activity_names(self) -> tuple[str, ...]:
        """Vocabulary ordered by activity id."""
        names = [""] * len(self.activities)
        for name, aid in self.activities.items():
            names[aid] = name
        return tuple(names)

    def activity_name(self, activity_id: int) -> str:
        return self.activity_names[activity_id]

    @property
    def n_activities(self) -> int:
        return len(self.activities)

    def __len__(self) -> int:
        return len(self.instances)


class GenderCount(NamedTuple):
    male: int
    female: int

    @property
    def total(self) -> int:
        return self.male + self.female


@dataclass(frozen=True)
class TrainingStats:
    """Per-activity male/female label counts from the training set."""

    counts: dict[str, GenderCount] = field(default_factory=dict)

    def __post_init__(self):
        for name, count in self.counts.items():
            for value in count:
                if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                    raise ValidationError(
                        f"activity {name!r}: counts must be nonnegative integers, got {count}"
                    )

    def is_constrained(self, name: str) -> bool:
        """True when the activity has at least one gendered training label."""
        count = self.counts.get(name)
        return count is not None and count.total > 0


def _open_for_read(source) -> IO[str]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return io.StringIO(data)
    raise TypeError(f"unsupported source type {type(source)!r}")


def _open_for_write(sink) -> tuple[IO[str], bool]:
    if isinstance(sink, (str, Path)):
        return open(sink, "w", encoding="utf-8"), True
    if hasattr(sink, "write"):
        return sink, False
    raise TypeError(f"unsupported sink type {type(sink)!r}")


_GENDER_CODES = {tag.value: tag for tag in GenderTag}


def _parse_candidate(raw, vocab: dict[str, int], where: str) -> CandidateStructure:
    if not isinstance(raw, dict):
        raise CorpusFormatError(f"{where}: candidate must be an object, got {type(raw).__name__}")
    try:
        activity = raw["activity"]
        gender = raw["gender"]
        score = raw["score"]
    except KeyError as exc:
        raise CorpusFormatError(f"{where}: candidate missing key {exc.args[0]!r}") from None
    if not isinstance(activity, str) or not activity:
        raise CorpusFormatError(f"{where}: activity must be a nonempty string")
    if gender not in _GENDER_CODES:
        raise CorpusFormatError(f"{where}: gender must be one of 'M', 'W', '-', got {gender!r}")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise ValidationError(f"{where}: score must be a number, got {score!r}")
    score = float(score)
    if not math.isfinite(score):
        raise ValidationError(f"{where}: score must be finite, got {score!r}")
    if activity not in vocab:
        vocab[activity] = len(vocab)
    return CandidateStructure(vocab[activity], _GENDER_CODES[gender], score)


def load_corpus(source) -> Corpus:
    """Load and validate a corpus from JSONL (path, bytes, or file object).

    Raises CorpusFormatError on malformed records (with line number) and
    ValidationError on invariant violations (naming the instance).
    """
    stream = _open_for_read(source)
    vocab: dict[str, int] = {}
    instances: list[Instance] = []
    seen_ids: set[str] = set()
    try:
        for lineno, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise CorpusFormatError(f"line {lineno}: instance must be an object")
            inst_id = record.get("id")
            if not isinstance(inst_id, str) or not inst_id:
                raise CorpusFormatError(f"line {lineno}: 'id' must be a nonempty string")
            if inst_id in seen_ids:
                raise ValidationError(f"line {lineno}: duplicate instance id {inst_id!r}")
            seen_ids.add(inst_id)
            raw_candidates = record.get("candidates")
            if not isinstance(raw_candidates, list) or not raw_candidates:
                raise ValidationError(
                    f"line {lineno}: instance {inst_id!r} has no candidates"
                )
            where = f"line {lineno}: instance {inst_id!r}"
            candidates = tuple(_parse_candidate(c, vocab, where) for c in raw_candidates)
            gold = record.get("gold")
            if gold is not None:
                if isinstance(gold, bool) or not isinstance(gold, int):
                    raise CorpusFormatError(f"{where}: gold must be an integer index")
                if not (0 <= gold < len(candidates)):
                    raise ValidationError(
                        f"{where}: gold index {gold} out of range for "
                        f"{len(candidates)} candidates"
                    )
            instances.append(Instance(inst_id, candidates, gold))
    finally:
        if stream is not source:
            stream.close()
    return Corpus(tuple(instances), vocab)


def dump_corpus(corpus: Corpus, sink) -> None:
    """Write a corpus back to JSONL; round-trips exactly through load_corpus."""
    stream, owned = _open_for_write(sink)
    try:
        names = corpus.activity_names
        for inst in corpus.instances:
            record: dict = {"id": inst.id}
            if inst.gold is not None:
                record["gold"] = inst.gold
            record["candidates"] = [
                {"activity": names[c.activity_id], "gender": c.gender.value, "score": c.score}
                for c in inst.candidates
            ]
            stream.write(json.dumps(record) + "\n")
    finally:
        if owned:
            stream.close()


def load_training_stats(source) -> TrainingStats:
    """Load per-activity male/female label counts from a JSON object."""
    stream = _open_for_read(source)
    try:
        try:
            raw = json.load(stream)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid stats JSON at line {exc.lineno}: {exc.msg}") from None
    finally:
        if stream is not source:
            stream.close()
    if not isinstance(raw, dict):
        raise CorpusFormatError("stats file must be a JSON object")
    counts: dict[str, GenderCount] = {}
    for name, entry in raw.items():
        if not isinstance(entry, dict):
            raise CorpusFormatError(f"activity {name!r}: counts must be an object")
        for key in ("male", "female"):
            if key not in entry:
                raise CorpusFormatError(f"activity {name!r}: missing {key!r} count")
            value = entry[key]
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValidationError(f"activity {name!r}: {key} count must be an integer")
            if value < 0:
                raise ValidationError(f"activity {name!r}: {key} count must be nonnegative")
        counts[name] = GenderCount(entry["male"], entry["female"])
    return TrainingStats(counts)


def dump_training_stats(stats: TrainingStats, sink) -> None:
    stream, owned = _open_for_write(sink)
    try:
        payload = {
            name: {"male": count.male, "female": count.female}
            for name, count in stats.counts.items()
        }
        stream.write(json.dumps(payload, indent=2) + "\n")
    finally:
        if owned:
            stream.close()


def constrained_activities(stats: TrainingStats, corpus: Corpus) -> list[int]:
    """Activity ids eligible for a ratio constraint, ascending.

    An activity qualifies when it has a positive gendered training count and
    the corpus contains at least one gendered candidate for it, so that both
    the training ratio and the posterior ratio are well defined. Everything
    else is excluded (callers can report exclusions by diffing against the
    vocabulary).
    """
    has_gendered_mass: set[int] = set()
    for inst in corpus.instances:
        for cand in inst.candidates:
            if cand.gender.is_gendered:
                has_gendered_mass.add(cand.activity_id)
    eligible = [
        aid
        for name, aid in corpus.activities.items()
        if stats.is_constrained(name) and aid in has_gendered_mass
    ]
    return sorted(eligible)


def excluded_activities(stats: TrainingStats, corpus: Corpus) -> list[str]:
    """Vocabulary entries that cannot carry a constraint, by name.

    The complement of `constrained_activities`; exposed so front ends can
    report exclusions instead of dropping them silently.
    """
    keep = set(constrained_activities(stats, corpus))
    return [name for name, aid in sorted(corpus.activities.items(), key=lambda kv: kv[1]) if aid not in keep]
