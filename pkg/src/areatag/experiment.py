"""Experiment grid: models x temperatures x strategies over a cleaned corpus.

Run directory layout::

    <out>/manifest.json            config snapshot, digests, per-cell status
    <out>/records.jsonl            evaluated (cleaned) records
    <out>/exemplars.jsonl          exemplar pool used by one-/few-shot prompts
    <out>/corpus_stats.json
    <out>/prompts/<id>.txt         prompt bodies, content-addressed
    <out>/predictions/<cell>.jsonl one line per record
    <out>/outcomes/<cell>.jsonl    one line per record x level x criterion
    <out>/reports/<layout>.txt|json

Cells run one after another; records inside a cell fan out to a thread pool.
Every file is written to a temporary name and renamed into place.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import random
import re
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .chaining import ClassifierSettings, Prediction, classify_chained, classify_flat
from .corpus import (
    CleanRecord,
    QuarantinedRow,
    corpus_digest,
    filter_corpus,
    ingest,
    select_exemplars,
    split_holdout,
)
from .gateway import (
    DEFAULT_MAX_OUTPUT_TOKENS,
    DEFAULT_TEMPERATURE_GRID,
    MOCK_EMBED_MODEL,
    Gateway,
    check_temperature,
)
from .metrics import DEFAULT_THRESHOLD, EvalOutcome, MatchCriterion, accuracy, decide
from .prompting import FewShot, OneShot, ZeroShot
from .taxonomy import LEVELS, LabelPath, Level, Taxonomy, load_taxonomy_file

logger = logging.getLogger(__name__)

STRATEGIES = ("zero", "one", "few", "chain")
STRATEGY_TITLES = {
    "zero": "Zero-shot Prompt",
    "one": "One-shot Prompt",
    "few": "Few-shot Prompt",
    "chain": "Prompt Chaining",
}
CRITERIA_ORDER = {"em": 0, "sd": 1, "ed": 2}
DONE_STATES = ("complete", "skipped")


class ConfigError(ValueError):
    pass


class ResumeError(RuntimeError):
    """The run directory belongs to a different config, corpus or taxonomy."""


class IncompleteRunError(RuntimeError):
    pass


@dataclass
class GridConfig:
    taxonomy_path: str
    corpus_path: str
    out_dir: str
    models: list[str]
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    temperatures: list[float] = field(default_factory=lambda: list(DEFAULT_TEMPERATURE_GRID))
    criteria: list[str] = field(default_factory=lambda: ["em", "sd", "ed"])
    threshold: float = DEFAULT_THRESHOLD
    embed_model: str | None = None
    exemplars: int = 3
    exemplar_pool_path: str | None = None
    seed: int = 0
    parallel: int = 4
    min_class_count: int = 0
    snap_threshold: float = DEFAULT_THRESHOLD
    retry_off_list: bool = True
    zero_shot_taxonomy: bool = False
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS

    # fields that may differ between a run and its resume
    _RUNTIME_ONLY = ("out_dir", "parallel", "criteria", "threshold", "embed_model")

    def __post_init__(self) -> None:
        if not self.models:
            raise ConfigError("at least one model id is required")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"unknown strategy {bad[0]!r}; choose from {', '.join(STRATEGIES)}")
        if not self.temperatures:
            raise ConfigError("at least one temperature is required")
        try:
            self.temperatures = [check_temperature(t) for t in self.temperatures]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")
        if "few" in self.strategies and self.exemplars < 2:
            raise ConfigError("few-shot prompting needs --exemplars >= 2")
        if self.exemplars < 1 and "one" in self.strategies:
            raise ConfigError("one-shot prompting needs at least one exemplar")
        for c in self.criteria:
            try:
                MatchCriterion.parse(c, threshold=self.threshold)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        data = {k: v for k, v in self.snapshot().items() if k not in self._RUNTIME_ONLY}
        return _digest_json(data)

    def match_criteria(self) -> list[MatchCriterion]:
        return [
            MatchCriterion.parse(c, threshold=self.threshold, embed_model=self.embed_model)
            for c in self.criteria
        ]


@dataclass(frozen=True)
class Cell:
    strategy: str
    model_id: str
    temperature: float

    @property
    def cell_id(self) -> str:
        model = re.sub(r"[^A-Za-z0-9.-]+", "-", self.model_id).strip("-") or "model"
        return f"{self.strategy}__{model}__t{self.temperature:.2f}"


def grid_cells(config: GridConfig) -> list[Cell]:
    return [
        Cell(strategy, model, temperature)
        for model in config.models
        for temperature in config.temperatures
        for strategy in config.strategies
    ]


@dataclass
class RunManifest:
    out_dir: Path
    config: dict
    config_digest: str
    corpus_digest: str
    taxonomy_digest: str
    cells: dict[str, dict]
    created_at: str
    updated_at: str

    @property
    def path(self) -> Path:
        return self.out_dir / "manifest.json"

    @property
    def complete(self) -> bool:
        return all(c["status"] in DONE_STATES for c in self.cells.values())

    def incomplete_cells(self) -> list[str]:
        return [k for k, c in self.cells.items() if c["status"] not in DONE_STATES]

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "config_digest": self.config_digest,
            "corpus_digest": self.corpus_digest,
            "taxonomy_digest": self.taxonomy_digest,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "cells": self.cells,
        }

    def save(self) -> None:
        self.updated_at = _now()
        _atomic_write(self.path, json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, out_dir: str | Path) -> "RunManifest":
        out_dir = Path(out_dir)
        path = out_dir / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"no manifest at {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls(out_dir=out_dir, **data)


# --------------------------------------------------------------------------- helpers


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _digest_json(obj) -> str:
    text = json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _clean_record_json(r: CleanRecord) -> dict:
    return {**r.to_json(), "input_text": r.input_text}


def load_clean_records(path: str | Path) -> list[CleanRecord]:
    out = []
    for obj in _read_jsonl(Path(path)):
        out.append(CleanRecord(
            doi=obj["doi"], title=obj["title"], abstract=obj["abstract"],
            label=LabelPath(obj["domain"], obj["subject"], obj["topic"]),
            input_text=obj["input_text"],
        ))
    return out


# --------------------------------------------------------------------------- run


@dataclass
class PreparedRun:
    taxonomy: Taxonomy
    records: list[CleanRecord]
    pool: list[CleanRecord]
    one_shot: list[CleanRecord]
    few_shot: list[CleanRecord]
    quarantine: list[QuarantinedRow]
    stats: dict


def prepare(config: GridConfig) -> PreparedRun:
    """Load taxonomy and corpus, clean, and fix the exemplar pool."""
    taxonomy = load_taxonomy_file(config.taxonomy_path)
    quarantine: list[QuarantinedRow] = []
    raw = ingest(config.corpus_path, taxonomy, quarantine)
    records, stats = filter_corpus(raw, config.min_class_count)

    needs_exemplars = any(s in ("one", "few") for s in config.strategies)
    pool: list[CleanRecord] = []
    if config.exemplar_pool_path:
        pool, _ = filter_corpus(ingest(config.exemplar_pool_path, taxonomy), 0)
        overlap = {r.doi for r in pool} & {r.doi for r in records}
        if overlap:
            raise ConfigError(f"exemplar pool overlaps the evaluation corpus: {sorted(overlap)[0]}")
    elif needs_exemplars:
        pool, records = split_holdout(records, config.exemplars, config.seed)

    one = select_exemplars(pool, 1, config.seed) if "one" in config.strategies else []
    few = select_exemplars(pool, config.exemplars, config.seed) if "few" in config.strategies else []
    return PreparedRun(taxonomy, records, pool, one, few, quarantine, stats.to_json())


def _classifier(cell: Cell, config: GridConfig, prep: PreparedRun,
                gateway: Gateway) -> Callable[[CleanRecord], Prediction]:
    settings = ClassifierSettings(
        cell.model_id, cell.temperature, config.snap_threshold,
        config.retry_off_list, config.max_output_tokens,
    )
    if cell.strategy == "chain":
        return lambda r: classify_chained(r, prep.taxonomy, gateway, settings)
    if cell.strategy == "zero":
        strategy = ZeroShot(embed_taxonomy=config.zero_shot_taxonomy)
    elif cell.strategy == "one":
        strategy = OneShot(prep.one_shot[0])
    else:
        strategy = FewShot(tuple(prep.few_shot))
    return lambda r: classify_flat(r, strategy, prep.taxonomy, gateway, settings)


def _open_manifest(config: GridConfig, out: Path, corpus_dig: str, tax_dig: str) -> RunManifest:
    cells = grid_cells(config)
    if (out / "manifest.json").exists():
        manifest = RunManifest.load(out)
        for name, old, new in (
            ("config", manifest.config_digest, config.digest()),
            ("corpus", manifest.corpus_digest, corpus_dig),
            ("taxonomy", manifest.taxonomy_digest, tax_dig),
        ):
            if old != new:
                raise ResumeError(
                    f"{name} digest changed since this run was started "
                    f"({old[:12]} != {new[:12]}); use a fresh --out directory"
                )
        manifest.config = config.snapshot()
        return manifest
    now = _now()
    return RunManifest(
        out_dir=out,
        config=config.snapshot(),
        config_digest=config.digest(),
        corpus_digest=corpus_dig,
        taxonomy_digest=tax_dig,
        cells={
            c.cell_id: {
                "strategy": c.strategy,
                "model_id": c.model_id,
                "temperature": c.temperature,
                "status": "pending",
                "predictions": f"predictions/{c.cell_id}.jsonl",
                "count": 0,
                "error": None,
            }
            for c in cells
        },
        created_at=now,
        updated_at=now,
    )


def run_grid(config: GridConfig, gateway: Gateway,
             progress: Callable[[str], None] | None = None) -> RunManifest:
    """Run (or resume) every cell of the grid.

    Completed cells whose prediction file exists are not re-run. A cell in
    which any record fails is marked ``incomplete`` with the first error (in
    record order) and nothing is written for it.
    """
    out = Path(config.out_dir)
    prep = prepare(config)
    corpus_dig = corpus_digest(prep.records + prep.pool)
    manifest = _open_manifest(config, out, corpus_dig, prep.taxonomy.digest())

    _atomic_write(out / "records.jsonl", _jsonl(_clean_record_json(r) for r in prep.records))
    _atomic_write(out / "exemplars.jsonl", _jsonl(_clean_record_json(r) for r in prep.pool))
    _atomic_write(out / "corpus_stats.json", json.dumps(
        {**prep.stats, "quarantined": [dataclasses.asdict(q) for q in prep.quarantine]},
        indent=2, ensure_ascii=False) + "\n")
    manifest.save()

    for cell in grid_cells(config):
        entry = manifest.cells[cell.cell_id]
        pred_path = out / entry["predictions"]
        if entry["status"] == "complete" and pred_path.exists():
            if progress:
                progress(f"skip {cell.cell_id} (complete)")
            continue
        if progress:
            progress(f"run  {cell.cell_id} ({len(prep.records)} records)")
        entry["started_at"] = _now()
        classify = _classifier(cell, config, prep, gateway)
        with ThreadPoolExecutor(max_workers=config.parallel) as pool:
            futures = [pool.submit(classify, r) for r in prep.records]
        predictions, first_error = [], None
        for fut in futures:
            exc = fut.exception()
            if exc is not None:
                first_error = first_error or f"{type(exc).__name__}: {exc}"
            else:
                predictions.append(fut.result())

        entry["finished_at"] = _now()
        if first_error is not None:
            entry.update(status="incomplete", error=first_error, count=0)
            logger.error("cell %s incomplete: %s", cell.cell_id, first_error)
        else:
            for p in predictions:
                for pid, text in sorted(p.prompts.items()):
                    target = out / "prompts" / f"{pid}.txt"
                    if not target.exists():
                        _atomic_write(target, text)
            _atomic_write(pred_path, _jsonl(p.to_json() for p in predictions))
            entry.update(status="complete", error=None, count=len(predictions))
        manifest.save()
    return manifest


# --------------------------------------------------------------------------- scoring


def load_predictions(manifest: RunManifest, cell_id: str) -> list[Prediction]:
    path = manifest.out_dir / manifest.cells[cell_id]["predictions"]
    if not path.exists():
        raise FileNotFoundError(f"missing prediction file {path}")
    return [Prediction.from_json(obj) for obj in _read_jsonl(path)]


def score_predictions(predictions: Sequence[Prediction], criteria: Sequence[MatchCriterion],
                      gateway: Gateway | None = None,
                      split_multivalent: bool = False) -> list[EvalOutcome]:
    """One outcome per prediction x gold-present level x criterion."""
    outcomes = []
    for p in predictions:
        if p.gold is None:
            continue
        for level in LEVELS:
            gold = p.gold.at(level)
            if gold is None:
                continue
            for criterion in criteria:
                embedder = None
                if criterion.kind == "ed":
                    if gateway is None:
                        raise ConfigError("embedding criterion needs an embedding gateway")
                    embedder = gateway.embedder(criterion.embed_model or MOCK_EMBED_MODEL)
                outcomes.append(decide(
                    criterion, p.resolved(level), gold, embedder,
                    record_id=p.record_id, level=level, split_multivalent=split_multivalent,
                    strategy=p.strategy, model_id=p.model_id, temperature=p.temperature,
                ))
    return outcomes


def score_run(manifest: RunManifest, criteria: Sequence[MatchCriterion],
              gateway: Gateway | None = None, split_multivalent: bool = False) -> list[Path]:
    """Write ``outcomes/<cell>.jsonl`` for every complete cell."""
    if not manifest.complete:
        raise IncompleteRunError(
            f"run has incomplete cells: {', '.join(manifest.incomplete_cells())}"
        )
    if any(c.kind == "ed" for c in criteria) and gateway is None:
        raise ConfigError("embedding criterion needs an embedding gateway")
    written = []
    for cell_id, entry in manifest.cells.items():
        if entry["status"] != "complete":
            continue
        outcomes = score_predictions(load_predictions(manifest, cell_id), criteria,
                                     gateway, split_multivalent)
        path = manifest.out_dir / "outcomes" / f"{cell_id}.jsonl"
        _atomic_write(path, _jsonl(o.to_json() for o in outcomes))
        written.append(path)
    return written


def load_outcomes(out_dir: str | Path) -> list[EvalOutcome]:
    manifest = RunManifest.load(out_dir)
    outcomes = []
    for cell_id, entry in manifest.cells.items():
        if entry["status"] != "complete":
            continue
        path = manifest.out_dir / "outcomes" / f"{cell_id}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"missing outcome file {path}; run `score` first")
        outcomes.extend(EvalOutcome.from_json(o) for o in _read_jsonl(path))
    return outcomes


# --------------------------------------------------------------------------- reports


def percent(matched: int, total: int) -> str:
    """Accuracy as a percentage, rounded half-up to one decimal."""
    value = (Decimal(matched) * 100 / Decimal(total)).quantize(Decimal("0.1"), ROUND_HALF_UP)
    return f"{value}"


@dataclass(frozen=True)
class ReportCell:
    matched: int
    total: int
    accuracy: float

    @property
    def text(self) -> str:
        return percent(self.matched, self.total)


@dataclass
class ReportBlock:
    title: str
    strategy: str
    columns: list[tuple[str, str]]  # (group heading, column heading)
    rows: list[tuple[str, list[ReportCell | None]]]
    temperature: float | None = None
    column_keys: list[tuple] = field(default_factory=list)

    def cell(self, model: str, group: str, column: str) -> ReportCell | None:
        idx = self.columns.index((group, column))
        for name, cells in self.rows:
            if name == model:
                return cells[idx]
        raise KeyError(model)


@dataclass
class ReportTable:
    layout: str
    blocks: list[ReportBlock]

    def block(self, strategy: str, temperature: float | None = None) -> ReportBlock:
        for b in self.blocks:
            if b.strategy == strategy and (temperature is None or b.temperature == temperature):
                return b
        raise KeyError((strategy, temperature))

    def to_json(self) -> dict:
        return {
            "layout": self.layout,
            "blocks": [
                {
                    "title": b.title,
                    "strategy": b.strategy,
                    "temperature": b.temperature,
                    "columns": [list(c) for c in b.columns],
                    "rows": [
                        {
                            "model": name,
                            "cells": [
                                None if c is None else
                                {"matched": c.matched, "total": c.total, "percent": c.text}
                                for c in cells
                            ],
                        }
                        for name, cells in b.rows
                    ],
                }
                for b in self.blocks
            ],
        }


def _criterion_sort(tag: str) -> tuple:
    return (CRITERIA_ORDER.get(tag.split("@")[0], 9), tag)


def _strategy_sort(s: str) -> int:
    return STRATEGIES.index(s) if s in STRATEGIES else len(STRATEGIES)


def _cell(outs: list[EvalOutcome]) -> ReportCell | None:
    if not outs:
        return None
    return ReportCell(sum(o.matched for o in outs), len(outs), accuracy(outs))


def _temp(t: float | None) -> str:
    return "n/a" if t is None else str(float(t))


def _criterion_heading(tag: str, all_tags: Sequence[str]) -> str:
    kind = tag.split("@")[0].upper()
    same_kind = [t for t in all_tags if t.split("@")[0] == tag.split("@")[0]]
    return kind if len(same_kind) == 1 else tag


def make_report(outcomes: Sequence[EvalOutcome], layout: str = "hierarchy",
                criterion: str | None = None) -> tuple[ReportTable, str]:
    """Aggregate outcomes into accuracy tables.

    ``hierarchy``: one block per (strategy, temperature); rows are models,
    columns are level x criterion. ``temperature-sweep``: one block per
    (strategy, level); rows are models, columns are temperatures, for one
    criterion (default: EM if present).
    """
    if not outcomes:
        raise ValueError("cannot report on an empty outcome set")
    tags = sorted({o.criterion for o in outcomes}, key=_criterion_sort)
    models = sorted({o.model_id for o in outcomes})
    strategies = sorted({o.strategy for o in outcomes}, key=_strategy_sort)

    groups: dict[tuple, list[EvalOutcome]] = {}
    for o in outcomes:
        groups.setdefault((o.strategy, o.temperature, o.model_id, o.level, o.criterion), []).append(o)

    blocks = []
    if layout == "hierarchy":
        for strategy in strategies:
            temps = sorted({o.temperature for o in outcomes if o.strategy == strategy})
            for temp in temps:
                present = {(o.level, o.criterion) for o in outcomes
                           if o.strategy == strategy and o.temperature == temp}
                keys = [(lvl, tag) for lvl in LEVELS for tag in tags if (lvl, tag) in present]
                columns = [(lvl.label.capitalize(), _criterion_heading(tag, tags)) for lvl, tag in keys]
                rows = []
                for model in models:
                    cells = [_cell(groups.get((strategy, temp, model, lvl, tag), []))
                             for lvl, tag in keys]
                    if any(c is not None for c in cells):
                        rows.append((model, cells))
                blocks.append(ReportBlock(
                    f"{STRATEGY_TITLES.get(strategy, strategy)} (temperature {_temp(temp)})",
                    strategy, columns, rows, temp, keys,
                ))
    elif layout in ("temperature-sweep", "sweep"):
        layout = "temperature-sweep"
        tag = criterion or ("em" if "em" in tags else tags[0])
        if tag not in tags:
            raise ValueError(f"criterion {tag!r} not among scored criteria {tags}")
        for strategy in strategies:
            for lvl in LEVELS:
                temps = sorted({o.temperature for o in outcomes
                                if o.strategy == strategy and o.level == lvl and o.criterion == tag})
                if not temps:
                    continue
                heading = _criterion_heading(tag, tags)
                columns = [(f"{lvl.label.capitalize()} {heading}", _temp(t)) for t in temps]
                rows = []
                for model in models:
                    cells = [_cell(groups.get((strategy, t, model, lvl, tag), [])) for t in temps]
                    if any(c is not None for c in cells):
                        rows.append((model, cells))
                blocks.append(ReportBlock(
                    f"{STRATEGY_TITLES.get(strategy, strategy)}: {lvl.label} accuracy by temperature",
                    strategy, columns, rows, None, [(lvl, tag, t) for t in temps],
                ))
    else:
        raise ValueError(f"unknown report layout {layout!r}")

    table = ReportTable(layout, blocks)
    return table, render_report(table)


def render_report(table: ReportTable) -> str:
    chunks = []
    for block in table.blocks:
        first = "Model"
        widths = [max(len(first), *(len(name) for name, _ in block.rows))] if block.rows else [len(first)]
        for i, (group, col) in enumerate(block.columns):
            cell_w = max((len(cells[i].text) if cells[i] else 1) for _, cells in block.rows) if block.rows else 1
            widths.append(max(len(col), cell_w, 5))
        # group headings span consecutive columns
        group_line = [" " * widths[0]]
        spans: list[tuple[str, int]] = []
        for i, (group, _) in enumerate(block.columns):
            if spans and spans[-1][0] == group:
                spans[-1] = (group, spans[-1][1] + widths[i + 1] + 3)
            else:
                spans.append((group, widths[i + 1]))
        group_line += [g.center(w) for g, w in spans]
        header = [first.ljust(widths[0])] + [c.rjust(widths[i + 1]) for i, (_, c) in enumerate(block.columns)]
        lines = [block.title, " | ".join(group_line).rstrip(), " | ".join(header)]
        lines.append("-+-".join("-" * w for w in widths))
        for name, cells in block.rows:
            row = [name.ljust(widths[0])]
            row += [(c.text if c else "-").rjust(widths[i + 1]) for i, c in enumerate(cells)]
            lines.append(" | ".join(row))
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


def write_report(out_dir: str | Path, layout: str = "hierarchy",
                 criterion: str | None = None) -> tuple[ReportTable, str]:
    manifest = RunManifest.load(out_dir)
    if not manifest.complete:
        raise IncompleteRunError(
            f"run has incomplete cells: {', '.join(manifest.incomplete_cells())}"
        )
    table, text = make_report(load_outcomes(out_dir), layout, criterion)
    reports = Path(out_dir) / "reports"
    _atomic_write(reports / f"{table.layout}.txt", text)
    _atomic_write(reports / f"{table.layout}.json",
                  json.dumps(table.to_json(), indent=2, ensure_ascii=False) + "\n")
    return table, text


# --------------------------------------------------------------------------- error sampling


@dataclass(frozen=True)
class ErrorSample:
    record_id: str
    strategy: str
    model_id: str
    temperature: float | None
    text: str
    predicted: tuple[str | None, ...]
    gold: tuple[str | None, ...]

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "strategy": self.strategy,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "text": self.text,
            "predicted": list(self.predicted),
            "gold": list(self.gold),
        }


def sample_errors(outcomes: Sequence[EvalOutcome], n: int, seed: int,
                  records: Sequence[CleanRecord] = (), *, strategy: str | None = None,
                  model_id: str | None = None) -> list[ErrorSample]:
    """Uniformly sample ``n`` misclassified (record, cell) pairs under exact match.

    A pair is misclassified when any of its EM outcomes failed. If fewer than
    ``n`` exist all are returned and a warning is issued.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    texts = {r.doi: r.input_text for r in records}
    units: dict[tuple, dict[Level, EvalOutcome]] = {}
    for o in outcomes:
        if o.criterion != "em":
            continue
        if strategy is not None and o.strategy != strategy:
            continue
        if model_id is not None and o.model_id != model_id:
            continue
        key = (o.strategy, o.model_id, o.temperature if o.temperature is not None else -1.0, o.record_id)
        units.setdefault(key, {})[o.level] = o
    wrong = sorted(k for k, levels in units.items() if not all(o.matched for o in levels.values()))
    if n == 0:
        return []
    rng = random.Random(seed)
    if n > len(wrong):
        warnings.warn(f"only {len(wrong)} misclassified items available; returning all of them")
        picked = list(wrong)
    else:
        picked = sorted(rng.sample(wrong, n))
    samples = []
    for key in picked:
        levels = units[key]
        strat, model, temp, rid = key
        samples.append(ErrorSample(
            rid, strat, model, None if temp == -1.0 else temp, texts.get(rid, ""),
            tuple(levels[l].predicted if l in levels else None for l in LEVELS),
            tuple(levels[l].gold if l in levels else None for l in LEVELS),
        ))
    return samples
