"""Prompt rendering for in-context learning and chained classification.

Rendering is pure: the same inputs always give the same bytes, so prompts can
be golden-tested and content-addressed by :attr:`RenderedPrompt.prompt_id`.

Option lists are rendered as JSON arrays (``["Biology", "Medicine"]``) so
labels that themselves contain commas stay unambiguous and can be parsed back
with :func:`parse_options`.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

from .corpus import CleanRecord
from .taxonomy import LabelPath, Level, Taxonomy


class PromptError(ValueError):
    pass


ROLE_ICL = "Suppose you are a data annotator who finds the research area of scientific texts."
ROLE_ZERO = (
    "Suppose you are a data annotator who finds the research area of scientific texts "
    "using ORKG taxonomy."
)
ROLE_CHAIN = "Suppose you are a data annotator who finds the research area from a scientific text."
CHAIN_LEVELS_LINE = "There are three hierarchical levels of annotation: domain, subject, and topic."
TASK_ONE = (
    "You are provided with one example of scientific text with its research area. "
    "Your task is to read texts and determine which research area from the list best "
    "represents the content of the scientific texts. Here is the hierarchy for each research:"
)
TASK_FEW = (
    "You are provided with few examples of scientific texts with its research area. "
    "Your task is to read texts and determine which research area from the list best "
    "represents the content of the scientific texts. Here is the hierarchy for each research:"
)
TASK_ZERO_TAXONOMY = "Here is the hierarchy for each research:"
ASSIGN_ZERO = "Assign a research area to the given scientific texts and provide it as output."
ASSIGN_WITH_TAXONOMY = "Assign a research area from the given taxonomy above and provide it as output."
OUTPUT_FORMAT = (
    "Write the research area as exactly three lines and nothing else:\n"
    "domain: <domain>\n"
    "subject: <subject>\n"
    "topic: <topic>"
)
RETRY_APPENDIX = "Answer with exactly one option from the list."

_STAGE_TEMPLATES = {
    Level.DOMAIN: (
        "{role}\n"
        "{levels}\n"
        "Given a title and abstract from a scientific paper, extract only the domain.\n"
        "The list of valid domains is: {options}.\n"
        "Given this paper: {text}, return only one of the domain names exactly as written, "
        "without providing any explanation."
    ),
    Level.SUBJECT: (
        "{role}\n"
        "{levels}\n"
        "Once you have identified the Domain of the scientific text in the above step, "
        "your task as a data annotator is to identify the subject of the text.\n"
        "The identified domain is: {domain}.\n"
        "From the following list of subjects under this domain: {options} "
        "(note that each domain has its own list of subjects),\n"
        "given this paper: {text}, identify and return only one subject from the list above, "
        "without providing any explanation."
    ),
    Level.TOPIC: (
        "{role}\n"
        "{levels}\n"
        "Once you have identified a Domain and respective Subject of the scientific text, "
        "your task is to identify the topic.\n"
        "The identified domain is: {domain}. The identified subject is: {subject}.\n"
        "From the following list of topics under this subject: {options} "
        "(note that each subject has its own list of topics),\n"
        "given this paper: {text}, identify and return only one topic from the list above, "
        "without providing any explanation."
    ),
}

_OPTION_INTROS = (
    "The list of valid domains is: ",
    "list of subjects under this domain: ",
    "list of topics under this subject: ",
)


@dataclass(frozen=True)
class ZeroShot:
    embed_taxonomy: bool = False
    kind: str = field(default="zero", init=False)


@dataclass(frozen=True)
class OneShot:
    exemplar: CleanRecord
    kind: str = field(default="one", init=False)


@dataclass(frozen=True)
class FewShot:
    exemplars: tuple[CleanRecord, ...]
    kind: str = field(default="few", init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "exemplars", tuple(self.exemplars))
        if len(self.exemplars) < 2:
            raise PromptError("few-shot prompting needs at least two exemplars")


@dataclass(frozen=True)
class ChainStage:
    level: Level
    options: tuple[str, ...]
    kind: str = field(default="chain", init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "options", tuple(self.options))
        if not self.options:
            raise PromptError("a chain stage needs a non-empty option list")


IclStrategy = Union[ZeroShot, OneShot, FewShot]
Strategy = Union[ZeroShot, OneShot, FewShot, ChainStage]


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    strategy: str
    record_id: str
    level: Level | None = None
    options: tuple[str, ...] = ()

    @property
    def prompt_id(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()[:16]

    def with_appendix(self, line: str = RETRY_APPENDIX) -> "RenderedPrompt":
        return RenderedPrompt(f"{self.text}\n{line}", self.strategy, self.record_id,
                              self.level, self.options)


def taxonomy_outline(taxonomy: Taxonomy) -> str:
    """Indented outline: domains flush left, subjects at two spaces, topics at four."""
    lines = []
    for d in taxonomy.domains:
        lines.append(d.label)
        for s in d.subjects:
            lines.append(f"  {s.label}")
            lines.extend(f"    {t}" for t in s.topics)
    return "\n".join(lines)


def format_options(options: Sequence[str]) -> str:
    return json.dumps(list(options), ensure_ascii=False)


def parse_options(text: str) -> list[str]:
    """Recover the option list embedded in a chain-stage prompt."""
    for intro in _OPTION_INTROS:
        i = text.find(intro)
        if i >= 0:
            start = i + len(intro)
            options, _ = json.JSONDecoder().raw_decode(text, start)
            return options
    raise PromptError("no option list found in prompt")


def _exemplar_block(index: int, exemplar: CleanRecord) -> str:
    return (
        f"Example {index}:\n"
        f"Scientific text: {exemplar.input_text}\n"
        f"Research area: {exemplar.label}"
    )


def render_icl(strategy: IclStrategy, taxonomy: Taxonomy, record: CleanRecord) -> RenderedPrompt:
    """Render a zero-, one- or few-shot prompt asking for all three levels at once."""
    if isinstance(strategy, ZeroShot):
        parts = [ROLE_ZERO]
        if strategy.embed_taxonomy:
            parts.append(f"{TASK_ZERO_TAXONOMY}\n{taxonomy_outline(taxonomy)}\n")
        parts.append(f"Scientific text to annotate is: {record.input_text}")
        parts.append(ASSIGN_WITH_TAXONOMY if strategy.embed_taxonomy else ASSIGN_ZERO)
    elif isinstance(strategy, (OneShot, FewShot)):
        exemplars = (strategy.exemplar,) if isinstance(strategy, OneShot) else strategy.exemplars
        for e in exemplars:
            if e.doi == record.doi:
                raise PromptError(f"exemplar {e.doi!r} is the record being classified")
        task = TASK_ONE if isinstance(strategy, OneShot) else TASK_FEW
        parts = [ROLE_ICL, f"{task}\n{taxonomy_outline(taxonomy)}\n"]
        parts.extend(_exemplar_block(i, e) + "\n" for i, e in enumerate(exemplars, start=1))
        parts.append(f"Scientific text to annotate is: {record.input_text}")
        parts.append(ASSIGN_WITH_TAXONOMY)
    else:
        raise PromptError(f"not an in-context strategy: {strategy!r}")
    parts.append(OUTPUT_FORMAT)
    return RenderedPrompt("\n".join(parts) + "\n", strategy.kind, record.doi)


def render_chain_stage(level: Level, options: Sequence[str], record: CleanRecord,
                       resolved_so_far: LabelPath | Sequence[str] = ()) -> RenderedPrompt:
    """Render one constrained stage of the domain -> subject -> topic chain."""
    stage = ChainStage(level, tuple(options))
    ancestors = (
        resolved_so_far.parts if isinstance(resolved_so_far, LabelPath) else tuple(resolved_so_far)
    )
    if len(ancestors) != int(level):
        raise PromptError(
            f"{level.label} stage needs {int(level)} resolved ancestor(s), got {len(ancestors)}"
        )
    text = _STAGE_TEMPLATES[level].format(
        role=ROLE_CHAIN,
        levels=CHAIN_LEVELS_LINE,
        options=format_options(stage.options),
        text=record.input_text,
        domain=ancestors[0] if ancestors else "",
        subject=ancestors[1] if len(ancestors) > 1 else "",
    )
    return RenderedPrompt(text + "\n", "chain", record.doi, level, stage.options)


_ANSWER_LINE = re.compile(r"^[\s*_#>-]*(domain|subject|topic)[*_]*\s*:[*_]*\s*(.*)$", re.IGNORECASE)


def parse_icl_answer(raw_text: str) -> dict[Level, str]:
    """Pull ``domain:``/``subject:``/``topic:`` lines out of a flat answer.

    Missing levels are absent from the result; the first line per level wins.
    """
    found: dict[Level, str] = {}
    for line in raw_text.splitlines():
        m = _ANSWER_LINE.match(line)
        if m:
            found.setdefault(Level.parse(m.group(1)), m.group(2))
    return found
