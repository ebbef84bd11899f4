"""Per-record classification: flat in-context prompting or a top-down chain."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .corpus import CleanRecord
from .gateway import (
    DEFAULT_MAX_OUTPUT_TOKENS,
    Gateway,
    GatewayError,
    GenerationRequest,
    normalize_response,
)
from .metrics import DEFAULT_THRESHOLD, string_distance
from .prompting import (
    IclStrategy,
    RenderedPrompt,
    parse_icl_answer,
    render_chain_stage,
    render_icl,
)
from .taxonomy import LEVELS, LabelPath, Level, Taxonomy


class Resolution(str, enum.Enum):
    EXACT = "exact"
    SNAPPED = "snapped"
    OFF_LIST = "off_list"
    SKIPPED = "skipped"  # chain stopped above this level


class StageError(GatewayError):
    """A gateway failure annotated with the record and stage it happened in."""

    def __init__(self, record_id: str, stage: str, cause: Exception) -> None:
        super().__init__(f"record {record_id}, {stage} stage: {cause}")
        self.record_id = record_id
        self.stage = stage


@dataclass(frozen=True)
class LevelPrediction:
    raw_answer: str = ""
    resolved_label: str | None = None
    resolution: Resolution = Resolution.SKIPPED
    score: float = 0.0
    retried: bool = False

    def to_json(self) -> dict:
        return {
            "raw_answer": self.raw_answer,
            "resolved_label": self.resolved_label,
            "resolution": self.resolution.value,
            "score": round(self.score, 6),
            "retried": self.retried,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LevelPrediction":
        return cls(obj["raw_answer"], obj["resolved_label"], Resolution(obj["resolution"]),
                   float(obj["score"]), bool(obj["retried"]))


@dataclass(frozen=True)
class StageTrace:
    level: Level | None
    options: tuple[str, ...]
    prompt_id: str
    raw_answer: str
    resolution: Resolution

    def to_json(self) -> dict:
        return {
            "level": self.level.label if self.level is not None else "all",
            "options": list(self.options),
            "prompt_id": self.prompt_id,
            "raw_answer": self.raw_answer,
            "resolution": self.resolution.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StageTrace":
        level = None if obj["level"] == "all" else Level.parse(obj["level"])
        return cls(level, tuple(obj["options"]), obj["prompt_id"], obj["raw_answer"],
                   Resolution(obj["resolution"]))


@dataclass
class Prediction:
    record_id: str
    strategy: str
    model_id: str
    temperature: float
    levels: dict[Level, LevelPrediction] = field(default_factory=dict)
    trace: list[StageTrace] = field(default_factory=list)
    gold: LabelPath | None = None
    # prompt bodies keyed by prompt_id; persisted separately, not in to_json
    prompts: dict[str, str] = field(default_factory=dict, repr=False)

    def resolved(self, level: Level) -> str | None:
        lp = self.levels.get(level)
        return lp.resolved_label if lp else None

    @property
    def resolved_path(self) -> tuple[str | None, ...]:
        return tuple(self.resolved(level) for level in LEVELS)

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "strategy": self.strategy,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "gold": None if self.gold is None else {
                "domain": self.gold.domain, "subject": self.gold.subject, "topic": self.gold.topic,
            },
            "levels": {lvl.label: self.levels[lvl].to_json() for lvl in LEVELS if lvl in self.levels},
            "trace": [t.to_json() for t in self.trace],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Prediction":
        gold = obj.get("gold")
        return cls(
            record_id=obj["record_id"],
            strategy=obj["strategy"],
            model_id=obj["model_id"],
            temperature=obj["temperature"],
            levels={Level.parse(k): LevelPrediction.from_json(v) for k, v in obj["levels"].items()},
            trace=[StageTrace.from_json(t) for t in obj["trace"]],
            gold=None if gold is None else LabelPath(gold["domain"], gold["subject"], gold["topic"]),
        )


def resolve_label(raw: str, options: list[str] | tuple[str, ...],
                  snap_threshold: float = DEFAULT_THRESHOLD) -> tuple[str | None, Resolution, float]:
    """Map a normalized answer onto ``options``.

    Exact members resolve as themselves. Otherwise the option with the highest
    string similarity is taken if that similarity is strictly above
    ``snap_threshold`` (first option wins ties). Returns
    ``(label or None, resolution, similarity)``.
    """
    if not options:
        raise ValueError("resolve_label needs a non-empty option list")
    if raw in options:
        return raw, Resolution.EXACT, 1.0
    if not raw:
        return None, Resolution.OFF_LIST, 0.0
    best, best_score = None, -1.0
    for option in options:
        score = string_distance(raw, option)
        if score > best_score:
            best, best_score = option, score
    if best_score > snap_threshold:
        return best, Resolution.SNAPPED, best_score
    return None, Resolution.OFF_LIST, best_score


@dataclass(frozen=True)
class ClassifierSettings:
    model_id: str
    temperature: float
    snap_threshold: float = DEFAULT_THRESHOLD
    retry_off_list: bool = True
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS


def _ask(gateway: Gateway, prompt: RenderedPrompt, settings: ClassifierSettings,
         stage: str, attempt: int = 0) -> str:
    request = GenerationRequest(settings.model_id, prompt.text, settings.temperature,
                                settings.max_output_tokens, attempt)
    try:
        return gateway.complete(request).raw_text
    except GatewayError as exc:
        raise StageError(prompt.record_id, stage, exc) from exc


def classify_chained(record: CleanRecord, taxonomy: Taxonomy, gateway: Gateway,
                     settings: ClassifierSettings) -> Prediction:
    """Resolve domain, then subject, then topic, each against its parent's children.

    An off-list stage (after the optional retry) ends the chain; the levels
    below it are recorded as skipped. A subject without topics ends the chain
    after the subject stage.
    """
    pred = Prediction(record.doi, "chain", settings.model_id, settings.temperature, gold=record.label)
    resolved: list[str] = []
    for level in LEVELS:
        options = taxonomy.options_at(resolved)
        if not options:
            break
        prompt = render_chain_stage(level, options, record, resolved)
        pred.prompts[prompt.prompt_id] = prompt.text
        raw = _ask(gateway, prompt, settings, level.label)
        label, resolution, score = resolve_label(normalize_response(raw), options,
                                                 settings.snap_threshold)
        pred.trace.append(StageTrace(level, tuple(options), prompt.prompt_id, raw, resolution))
        retried = False
        if resolution is Resolution.OFF_LIST and settings.retry_off_list:
            retried = True
            retry = prompt.with_appendix()
            pred.prompts[retry.prompt_id] = retry.text
            raw = _ask(gateway, retry, settings, level.label, attempt=1)
            label, resolution, score = resolve_label(normalize_response(raw), options,
                                                     settings.snap_threshold)
            pred.trace.append(StageTrace(level, tuple(options), retry.prompt_id, raw, resolution))
        pred.levels[level] = LevelPrediction(raw, label, resolution, score, retried)
        if label is None:
            break
        resolved.append(label)

    for level in LEVELS:
        pred.levels.setdefault(level, LevelPrediction())
    return pred


def _flat_options(taxonomy: Taxonomy, level: Level, resolved: list[str | None]) -> list[str]:
    parent = resolved[: int(level)]
    if all(p is not None for p in parent):
        return taxonomy.options_at(parent)
    if level is Level.TOPIC and resolved[0] is not None:
        # subject missed but domain known: any topic of that domain
        seen: dict[str, None] = {}
        for subject in taxonomy.options_at([resolved[0]]):
            for t in taxonomy.options_at([resolved[0], subject]):
                seen.setdefault(t, None)
        return list(seen)
    return taxonomy.labels(level)


def classify_flat(record: CleanRecord, strategy: IclStrategy, taxonomy: Taxonomy,
                  gateway: Gateway, settings: ClassifierSettings) -> Prediction:
    """One in-context call; each answered level is resolved independently.

    Unparseable or missing lines resolve off-list; nothing here is fatal
    except gateway failures.
    """
    prompt = render_icl(strategy, taxonomy, record)
    pred = Prediction(record.doi, strategy.kind, settings.model_id, settings.temperature,
                      gold=record.label)
    pred.prompts[prompt.prompt_id] = prompt.text
    raw = _ask(gateway, prompt, settings, "flat")
    answers = parse_icl_answer(raw)

    resolved: list[str | None] = [None, None, None]
    for level in LEVELS:
        options = _flat_options(taxonomy, level, resolved)
        raw_level = answers.get(level, "")
        if not options:
            pred.levels[level] = LevelPrediction(raw_level, None, Resolution.OFF_LIST, 0.0)
            continue
        label, resolution, score = resolve_label(normalize_response(raw_level), options,
                                                 settings.snap_threshold)
        resolved[level] = label
        pred.levels[level] = LevelPrediction(raw_level, label, resolution, score)

    found = {pred.levels[lvl].resolution for lvl in LEVELS}
    overall = next(r for r in (Resolution.OFF_LIST, Resolution.SNAPPED, Resolution.EXACT)
                   if r in found)
    pred.trace.append(StageTrace(None, (), prompt.prompt_id, raw, overall))
    return pred
