"""Label match criteria and accuracy.

Three ways of deciding whether a predicted label matches the gold label:

* ``em`` - exact match after trimming outer whitespace (case-sensitive);
* ``sd`` - normalized Levenshtein similarity ``1 - lev(a, b) / max(|a|, |b|)``;
* ``ed`` - cosine similarity of sentence embeddings of both labels.

``sd`` and ``ed`` count as a match when the score is strictly greater than the
threshold (0.7 by default).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from rapidfuzz.distance import Levenshtein

from .taxonomy import Level

DEFAULT_THRESHOLD = 0.7

Embedder = Callable[[str], Sequence[float]]


def exact_match(predicted: str, gold: str) -> int:
    """Return 1 if both labels are identical after trimming, else 0."""
    return int(predicted.strip() == gold.strip())


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit-cost insertion, deletion and substitution."""
    return Levenshtein.distance(a, b)


def string_distance(a: str, b: str) -> float:
    """Normalized Levenshtein similarity in [0, 1]; two empty strings score 1."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    if len(u) != len(v):
        raise ValueError(f"vector length mismatch: {len(u)} != {len(v)}")
    nu = math.sqrt(math.fsum(x * x for x in u))
    nv = math.sqrt(math.fsum(x * x for x in v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero-norm vector")
    value = math.fsum(x * y for x, y in zip(u, v)) / (nu * nv)
    # rounding can push |value| a hair past 1
    return max(-1.0, min(1.0, value))


@dataclass(frozen=True)
class MatchCriterion:
    """One of ``em``, ``sd`` (threshold) or ``ed`` (threshold, embedding model)."""

    kind: str
    threshold: float = DEFAULT_THRESHOLD
    embed_model: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("em", "sd", "ed"):
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.kind != "em" and not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")

    @property
    def tag(self) -> str:
        """Stable identifier used in outcome files and report headers."""
        if self.kind == "em":
            return "em"
        tag = f"{self.kind}@{self.threshold:g}"
        if self.kind == "ed" and self.embed_model:
            tag += f":{self.embed_model}"
        return tag

    @property
    def heading(self) -> str:
        return self.kind.upper()

    @classmethod
    def parse(cls, text: str, *, threshold: float = DEFAULT_THRESHOLD,
              embed_model: str | None = None) -> "MatchCriterion":
        """Parse a tag such as ``em``, ``sd``, ``sd@0.8`` or ``ed@0.7:nomic``."""
        m = re.fullmatch(r"(em|sd|ed)(?:@([0-9.]+))?(?::(.+))?", text.strip().lower())
        if not m:
            raise ValueError(f"cannot parse criterion {text!r}")
        kind, thr, model = m.groups()
        if kind == "em":
            return cls("em")
        return cls(
            kind,
            float(thr) if thr else threshold,
            (model or embed_model) if kind == "ed" else None,
        )


EM = MatchCriterion("em")
SD = MatchCriterion("sd")


@dataclass(frozen=True)
class EvalOutcome:
    record_id: str
    level: Level
    criterion: str
    predicted: str | None
    gold: str
    score: float
    matched: bool
    strategy: str = ""
    model_id: str = ""
    temperature: float | None = None

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "strategy": self.strategy,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "level": self.level.label,
            "criterion": self.criterion,
            "predicted": self.predicted,
            "gold": self.gold,
            "score": f"{self.score:.6f}",
            "matched": self.matched,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalOutcome":
        return cls(
            record_id=obj["record_id"],
            level=Level.parse(obj["level"]),
            criterion=obj["criterion"],
            predicted=obj["predicted"],
            gold=obj["gold"],
            score=float(obj["score"]),
            matched=bool(obj["matched"]),
            strategy=obj.get("strategy", ""),
            model_id=obj.get("model_id", ""),
            temperature=obj.get("temperature"),
        )


def _segments(label: str) -> list[str]:
    parts = [p.strip() for p in re.split(r"[,/]", label)]
    return [p for p in parts if p] or [label]


def score_pair(criterion: MatchCriterion, predicted: str, gold: str,
               embedder: Embedder | None = None) -> float:
    if criterion.kind == "em":
        return float(exact_match(predicted, gold))
    if criterion.kind == "sd":
        return string_distance(predicted, gold)
    if embedder is None:
        raise ValueError("embedding criterion requires an embedder")
    return cosine(embedder(predicted), embedder(gold))


def decide(criterion: MatchCriterion, predicted: str | None, gold: str,
           embedder: Embedder | None = None, *, record_id: str = "",
           level: Level = Level.DOMAIN, split_multivalent: bool = False,
           **cell) -> EvalOutcome:
    """Score one prediction against its gold label under ``criterion``.

    An unresolved prediction (``None`` or blank) never matches and scores 0.
    ``split_multivalent`` (experimental) scores the gold label segment-wise,
    splitting on commas and slashes, and keeps the best segment.
    """
    if not gold.strip():
        raise ValueError("gold label must be non-empty")
    if predicted is None or not predicted.strip():
        return EvalOutcome(record_id, level, criterion.tag, predicted, gold, 0.0, False, **cell)

    if split_multivalent and criterion.kind != "em":
        golds = [gold] + [s for s in _segments(gold) if s != gold]
        score = max(score_pair(criterion, predicted, g, embedder) for g in golds)
    else:
        score = score_pair(criterion, predicted, gold, embedder)

    matched = score == 1.0 if criterion.kind == "em" else score > criterion.threshold
    return EvalOutcome(record_id, level, criterion.tag, predicted, gold, score, matched, **cell)


def accuracy(outcomes: Iterable[EvalOutcome]) -> float:
    """Correct predictions over total predictions for one level and criterion."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("accuracy of an empty outcome list is undefined")
    kinds = {(o.level, o.criterion) for o in outcomes}
    if len(kinds) > 1:
        raise ValueError(f"outcomes mix levels/criteria: {sorted((l.label, c) for l, c in kinds)}")
    return sum(o.matched for o in outcomes) / len(outcomes)
