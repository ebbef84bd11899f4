"""Corpus ingestion, text cleaning, frequency filtering and exemplar selection."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import random
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .taxonomy import LabelPath, Level, Taxonomy

logger = logging.getLogger(__name__)

FIELDS = ("doi", "title", "abstract", "domain", "subject", "topic")
TITLE_SEPARATOR = ".\n"


class CorpusError(ValueError):
    """Unparseable corpus file or duplicate identifiers."""


@dataclass(frozen=True)
class RawRecord:
    doi: str
    title: str
    abstract: str
    label: LabelPath

    def to_json(self) -> dict:
        return {
            "doi": self.doi,
            "title": self.title,
            "abstract": self.abstract,
            "domain": self.label.domain,
            "subject": self.label.subject,
            "topic": self.label.topic,
        }


@dataclass(frozen=True)
class CleanRecord(RawRecord):
    input_text: str = ""

    @property
    def record_id(self) -> str:
        return self.doi


@dataclass(frozen=True)
class QuarantinedRow:
    line: int
    doi: str
    reason: str


@dataclass
class CorpusStats:
    ingested: int = 0
    dropped_empty_abstract: int = 0
    dropped_low_frequency_subject: int = 0
    dropped_low_frequency_topic: int = 0
    retained: int = 0
    class_frequency: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return (
            self.dropped_empty_abstract
            + self.dropped_low_frequency_subject
            + self.dropped_low_frequency_topic
        )

    def to_json(self) -> dict:
        return {
            "ingested": self.ingested,
            "retained": self.retained,
            "dropped_empty_abstract": self.dropped_empty_abstract,
            "dropped_low_frequency_subject": self.dropped_low_frequency_subject,
            "dropped_low_frequency_topic": self.dropped_low_frequency_topic,
            "class_frequency": self.class_frequency,
        }


# --------------------------------------------------------------------------- ingest


def _row_to_record(row: dict, where: str) -> RawRecord:
    missing = [k for k in ("doi", "title", "domain") if k not in row]
    if missing:
        raise CorpusError(f"{where}: missing field(s) {', '.join(missing)}")
    doi = str(row["doi"] or "").strip()
    if not doi:
        raise CorpusError(f"{where}: empty doi")

    def opt(key: str) -> str | None:
        value = row.get(key)
        if value is None:
            return None
        value = str(value)
        return value if value.strip() else None

    try:
        label = LabelPath(str(row["domain"]), opt("subject"), opt("topic"))
    except ValueError as exc:
        raise CorpusError(f"{where}: bad label path: {exc}") from exc
    return RawRecord(
        doi=doi,
        title=str(row.get("title") or ""),
        abstract=str(row.get("abstract") or ""),
        label=label,
    )


def _parse_rows(text: str, fmt: str) -> Iterable[tuple[int, dict]]:
    if fmt == "jsonl":
        for n, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {n}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"line {n}: expected a JSON object")
            yield n, obj
    elif fmt == "csv":
        reader = csv.DictReader(io.StringIO(text, newline=""))
        for n, row in enumerate(reader, start=2):
            yield n, row
    else:
        raise CorpusError(f"unknown corpus format {fmt!r}")


def parse_records(text: str, fmt: str = "jsonl", taxonomy: Taxonomy | None = None,
                  quarantine: list[QuarantinedRow] | None = None) -> list[RawRecord]:
    """Parse corpus text into records, one per row, text untouched.

    Rows whose label path is not in ``taxonomy`` are skipped, logged, and
    appended to ``quarantine`` when given. Duplicate DOIs are fatal.
    """
    records: list[RawRecord] = []
    seen: dict[str, int] = {}
    for n, row in _parse_rows(text, fmt):
        record = _row_to_record(row, f"line {n}")
        if record.doi in seen:
            raise CorpusError(
                f"duplicate doi {record.doi!r} (lines {seen[record.doi]} and {n})"
            )
        seen[record.doi] = n
        if taxonomy is not None and not taxonomy.has_path(record.label):
            reason = f"label path not in taxonomy: {record.label}"
            logger.warning("quarantined %s: %s", record.doi, reason)
            if quarantine is not None:
                quarantine.append(QuarantinedRow(n, record.doi, reason))
            continue
        records.append(record)
    return records


def ingest(source: str | Path, taxonomy: Taxonomy | None = None,
           quarantine: list[QuarantinedRow] | None = None) -> list[RawRecord]:
    """Read a ``.jsonl`` (default) or ``.csv`` corpus file."""
    path = Path(source)
    fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    return parse_records(path.read_text(encoding="utf-8"), fmt, taxonomy, quarantine)


def write_records(records: Iterable[RawRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")


def corpus_digest(records: Sequence[RawRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


# --------------------------------------------------------------------------- cleaning

_URL = re.compile(r"(?:\b[a-zA-Z][a-zA-Z0-9+.-]*://|\bwww\.)\S*")
_DISALLOWED = re.compile(r"[^\w\s.,;:()\-&/]|_")
_WHITESPACE = re.compile(r"\s+")
_KEEP_CONTROL = frozenset(" \t\n\r\f\v")


def _clean_once(text: str) -> str:
    text = unicodedata.normalize("NFC", text)
    text = "".join(
        ch for ch in text
        if ch in _KEEP_CONTROL or unicodedata.category(ch) != "Cc"
    )
    text = _URL.sub(" ", text)
    text = _DISALLOWED.sub("", text)
    return _WHITESPACE.sub(" ", text).strip()


def clean_text(raw: str) -> str:
    """Strip URLs, control characters and unusual punctuation; squeeze whitespace.

    Kept: letters, digits, whitespace and ``. , ; : ( ) - & /``. Passes are
    repeated until nothing changes, which makes the function idempotent even
    when removing punctuation exposes a new URL token.
    """
    text = raw
    for _ in range(16):
        cleaned = _clean_once(text)
        if cleaned == text:
            break
        text = cleaned
    return text


def make_input_text(title: str, abstract: str) -> str:
    title = title.rstrip(" .")
    if not title:
        return abstract
    return f"{title}{TITLE_SEPARATOR}{abstract}"


def to_clean(record: RawRecord) -> CleanRecord:
    title = clean_text(record.title)
    abstract = clean_text(record.abstract)
    return CleanRecord(
        doi=record.doi,
        title=title,
        abstract=abstract,
        label=record.label,
        input_text=make_input_text(title, abstract),
    )


def _class_keys(record: RawRecord) -> tuple[tuple[str, ...] | None, tuple[str, ...] | None]:
    parts = record.label.parts
    subject = parts[:2] if len(parts) >= 2 else None
    topic = parts[:3] if len(parts) >= 3 else None
    return subject, topic


def filter_corpus(records: Sequence[RawRecord], min_class_count: int,
                  min_topic_count: int | None = None) -> tuple[list[CleanRecord], CorpusStats]:
    """Clean records, drop empty abstracts, then prune rare classes to a fixed point.

    Subject and topic classes are keyed by their full path. ``min_topic_count``
    defaults to ``min_class_count``. After pruning, every subject/topic class
    left in the output occurs at least that many times in the output.
    """
    if min_class_count < 0:
        raise ValueError("min_class_count must be >= 0")
    if min_topic_count is None:
        min_topic_count = min_class_count
    stats = CorpusStats(ingested=len(records))

    kept: list[CleanRecord] = []
    for record in records:
        clean = to_clean(record)
        if not clean.abstract:
            stats.dropped_empty_abstract += 1
            continue
        kept.append(clean)

    while True:
        subjects = Counter(k for k, _ in map(_class_keys, kept) if k is not None)
        topics = Counter(k for _, k in map(_class_keys, kept) if k is not None)
        survivors = []
        for record in kept:
            subject, topic = _class_keys(record)
            if subject is not None and subjects[subject] < min_class_count:
                stats.dropped_low_frequency_subject += 1
            elif topic is not None and topics[topic] < min_topic_count:
                stats.dropped_low_frequency_topic += 1
            else:
                survivors.append(record)
        if len(survivors) == len(kept):
            break
        kept = survivors

    stats.retained = len(kept)
    for level in (Level.DOMAIN, Level.SUBJECT, Level.TOPIC):
        counts = Counter(r.label.at(level) for r in kept if r.label.at(level) is not None)
        stats.class_frequency[level.label] = dict(sorted(counts.items()))
    return kept, stats


# --------------------------------------------------------------------------- exemplars


def split_holdout(records: Sequence[CleanRecord], size: int,
                  seed: int) -> tuple[list[CleanRecord], list[CleanRecord]]:
    """Carve a stratified exemplar pool of ``size`` records out of ``records``.

    Returns ``(pool, rest)``; ``rest`` keeps input order.
    """
    pool = select_exemplars(records, size, seed)
    taken = {r.doi for r in pool}
    return pool, [r for r in records if r.doi not in taken]


def select_exemplars(records: Sequence[CleanRecord], k: int, seed: int) -> list[CleanRecord]:
    """Pick ``k`` exemplars, cycling through domains before repeating one.

    Deterministic for a given ``seed`` and input set (input order does not
    matter).
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > len(records):
        raise ValueError(f"cannot select {k} exemplars from a pool of {len(records)}")
    if k == 0:
        return []
    rng = random.Random(seed)
    by_domain: dict[str, list[CleanRecord]] = {}
    for r in sorted(records, key=lambda r: r.doi):
        by_domain.setdefault(r.label.domain, []).append(r)
    domains = sorted(by_domain)
    rng.shuffle(domains)
    for d in domains:
        rng.shuffle(by_domain[d])

    chosen: list[CleanRecord] = []
    while len(chosen) < k:
        for d in domains:
            if by_domain[d] and len(chosen) < k:
                chosen.append(by_domain[d].pop())
    return chosen
