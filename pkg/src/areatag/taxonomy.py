"""Three-level research-field taxonomy (domain -> subject -> topic).

The tree is loaded from a small JSON document::

    {"domains": [{"label": "Life Sciences",
                  "subjects": [{"label": "Medicine", "topics": ["Virology"]}]}]}

Array order is significant and is preserved everywhere (prompt option lists
are rendered in source order).
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence


class TaxonomyError(ValueError):
    """Raised for malformed taxonomy documents and unknown label prefixes."""


class Level(enum.IntEnum):
    DOMAIN = 0
    SUBJECT = 1
    TOPIC = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: "str | Level") -> "Level":
        if isinstance(value, Level):
            return value
        try:
            return cls[value.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown level: {value!r}") from None


LEVELS = (Level.DOMAIN, Level.SUBJECT, Level.TOPIC)


@dataclass(frozen=True)
class LabelPath:
    """A (possibly partial) path through the taxonomy.

    A path with only ``domain`` set is a valid prefix; ``topic`` requires
    ``subject``.
    """

    domain: str
    subject: str | None = None
    topic: str | None = None

    def __post_init__(self) -> None:
        for name in ("domain", "subject", "topic"):
            value = getattr(self, name)
            if value is None:
                continue
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"LabelPath.{name} must be a non-empty label, got {value!r}")
        if self.topic is not None and self.subject is None:
            raise ValueError("LabelPath with a topic must also have a subject")

    @classmethod
    def from_parts(cls, parts: Sequence[str | None]) -> "LabelPath":
        parts = list(parts) + [None] * (3 - len(parts))
        return cls(parts[0], parts[1], parts[2])

    @property
    def parts(self) -> tuple[str, ...]:
        """Populated labels, top-down."""
        return tuple(p for p in (self.domain, self.subject, self.topic) if p is not None)

    @property
    def depth(self) -> int:
        return len(self.parts)

    def at(self, level: Level) -> str | None:
        return (self.domain, self.subject, self.topic)[level]

    def prefix(self, level: Level) -> tuple[str, ...]:
        """Labels strictly above ``level`` (the parent prefix for that level)."""
        return self.parts[: int(level)]

    def __str__(self) -> str:
        return " > ".join(self.parts)


@dataclass(frozen=True)
class Subject:
    label: str
    topics: tuple[str, ...] = ()


@dataclass(frozen=True)
class Domain:
    label: str
    subjects: tuple[Subject, ...] = ()


@dataclass(frozen=True)
class Taxonomy:
    """Immutable label tree with per-prefix child indexes."""

    domains: tuple[Domain, ...]
    _children: dict[tuple[str, ...], tuple[str, ...]] = field(
        init=False, repr=False, compare=False
    )
    _members: dict[tuple[str, ...], frozenset[str]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        children: dict[tuple[str, ...], tuple[str, ...]] = {}
        children[()] = tuple(d.label for d in self.domains)
        _check_siblings(children[()], "root")
        for d in self.domains:
            children[(d.label,)] = tuple(s.label for s in d.subjects)
            _check_siblings(children[(d.label,)], d.label)
            for s in d.subjects:
                children[(d.label, s.label)] = tuple(s.topics)
                _check_siblings(s.topics, f"{d.label} > {s.label}")
                for t in s.topics:
                    children[(d.label, s.label, t)] = ()
        object.__setattr__(self, "_children", children)
        object.__setattr__(
            self, "_members", {k: frozenset(v) for k, v in children.items()}
        )

    def options_at(self, parent: Sequence[str] | LabelPath = ()) -> list[str]:
        """Child labels of ``parent`` in source order; ``[]`` for a leaf."""
        key = _prefix_key(parent)
        try:
            return list(self._children[key])
        except KeyError:
            raise TaxonomyError(f"unknown taxonomy prefix: {' > '.join(key)!r}") from None

    def contains(self, level: Level, parent: Sequence[str] | LabelPath, label: str) -> bool:
        key = _prefix_key(parent)
        if len(key) != int(level):
            return False
        members = self._members.get(key)
        return members is not None and label in members

    def has_path(self, path: LabelPath) -> bool:
        parts = path.parts
        return all(
            self.contains(Level(i), parts[:i], parts[i]) for i in range(len(parts))
        )

    def labels(self, level: Level) -> list[str]:
        """Every label at ``level`` in tree order, first occurrence kept."""
        seen: dict[str, None] = {}
        for key, kids in self._children.items():
            if len(key) == int(level):
                for k in kids:
                    seen.setdefault(k, None)
        return list(seen)

    def node_count(self) -> int:
        return len(self._children) - 1

    def depth(self) -> int:
        return max((len(k) for k in self._children), default=0)

    def leaves(self) -> Iterator[LabelPath]:
        for key, kids in self._children.items():
            if key and not kids:
                yield LabelPath.from_parts(key)

    def to_dict(self) -> dict:
        return {
            "domains": [
                {
                    "label": d.label,
                    "subjects": [
                        {"label": s.label, "topics": list(s.topics)} for s in d.subjects
                    ],
                }
                for d in self.domains
            ]
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _prefix_key(parent: Sequence[str] | LabelPath) -> tuple[str, ...]:
    if isinstance(parent, LabelPath):
        return parent.parts
    if isinstance(parent, str):
        return (parent,)
    return tuple(parent)


def _check_siblings(labels: Sequence[str], where: str) -> None:
    seen = set()
    for label in labels:
        if label in seen:
            raise TaxonomyError(f"duplicate label {label!r} under {where}")
        seen.add(label)


def _label(value: object, where: str) -> str:
    if not isinstance(value, str):
        raise TaxonomyError(f"label under {where} must be a string, got {type(value).__name__}")
    if not value.strip():
        raise TaxonomyError(f"empty label under {where}")
    return value


def load_taxonomy(source: str) -> Taxonomy:
    """Parse taxonomy JSON text.

    Raises:
        TaxonomyError: malformed nesting, empty labels or duplicate siblings.
    """
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"taxonomy is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("domains"), list):
        raise TaxonomyError('taxonomy must be an object with a "domains" array')

    domains = []
    for d in doc["domains"]:
        if not isinstance(d, dict):
            raise TaxonomyError("each domain must be an object")
        d_label = _label(d.get("label"), "root")
        raw_subjects = d.get("subjects", [])
        if not isinstance(raw_subjects, list):
            raise TaxonomyError(f'"subjects" of {d_label!r} must be an array')
        subjects = []
        for s in raw_subjects:
            if not isinstance(s, dict):
                raise TaxonomyError(f"each subject under {d_label!r} must be an object")
            s_label = _label(s.get("label"), d_label)
            raw_topics = s.get("topics", [])
            if not isinstance(raw_topics, list):
                raise TaxonomyError(f'"topics" of {s_label!r} must be an array')
            topics = tuple(_label(t, f"{d_label} > {s_label}") for t in raw_topics)
            subjects.append(Subject(s_label, topics))
        domains.append(Domain(d_label, tuple(subjects)))
    return Taxonomy(tuple(domains))


def load_taxonomy_file(path: str | Path) -> Taxonomy:
    return load_taxonomy(Path(path).read_text(encoding="utf-8"))


def builtin_taxonomy(name: str = "evaluation") -> Taxonomy:
    """Load a bundled tree: ``"orkg"`` (five domains) or ``"evaluation"`` (four)."""
    files = {"orkg": "orkg_taxonomy.json", "evaluation": "evaluation_taxonomy.json"}
    if name not in files:
        raise ValueError(f"unknown builtin taxonomy {name!r}; choose from {sorted(files)}")
    text = resources.files("areatag").joinpath("data", files[name]).read_text(encoding="utf-8")
    return load_taxonomy(text)
