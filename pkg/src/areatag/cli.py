"""Command-line front-end.

Settings are merged with precedence flags > environment > config file >
built-in defaults, validated, and handed to exactly one experiment operation.
Progress goes to stderr; tables go to stdout. Exit codes: 0 success, 1 an
incomplete grid cell, 2 a configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .corpus import CorpusError, QuarantinedRow, filter_corpus, ingest, write_records
from .experiment import (
    ConfigError,
    GridConfig,
    IncompleteRunError,
    ResumeError,
    RunManifest,
    _atomic_write,
    load_clean_records,
    load_outcomes,
    prepare,
    run_grid,
    sample_errors,
    score_run,
    write_report,
)
from .gateway import (
    DEFAULT_ENDPOINT,
    DEFAULT_TEMPERATURE_GRID,
    ENDPOINT_ENV,
    MOCK_EMBED_MODEL,
    GatewayError,
    HttpGateway,
    MockGateway,
    MockModel,
    check_temperature,
)
from .metrics import DEFAULT_THRESHOLD, MatchCriterion
from .taxonomy import TaxonomyError, load_taxonomy_file

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger("areatag")

ENV_PREFIX = "AREATAG_"
ENV_KEYS = {
    "endpoint": ENDPOINT_ENV,
    "taxonomy": ENV_PREFIX + "TAXONOMY",
    "corpus": ENV_PREFIX + "CORPUS",
    "out": ENV_PREFIX + "OUT",
    "model": ENV_PREFIX + "MODEL",
    "embed_model": ENV_PREFIX + "EMBED_MODEL",
    "parallel": ENV_PREFIX + "PARALLEL",
    "seed": ENV_PREFIX + "SEED",
}

DEFAULTS: dict[str, Any] = {
    "taxonomy": None,
    "corpus": None,
    "out": None,
    "model": [],
    "temperature": list(DEFAULT_TEMPERATURE_GRID),
    "strategy": ["zero", "one", "few", "chain"],
    "criterion": ["em", "sd", "ed"],
    "threshold": DEFAULT_THRESHOLD,
    "exemplars": 3,
    "exemplar_pool": None,
    "seed": 0,
    "parallel": 4,
    "mock": False,
    "mock_table": None,
    "endpoint": DEFAULT_ENDPOINT,
    "embed_model": None,
    "min_class_count": None,
    "min_topic_count": None,
    "layout": "hierarchy",
    "n": 100,
    "sweep_criterion": None,
    "only_strategy": None,
    "only_model": None,
    "no_retry": False,
    "zero_shot_taxonomy": False,
    "timeout": 120.0,
    "retries": 3,
}

REQUIRED = {
    "ingest": ("corpus", "out"),
    "clean": ("corpus", "out"),
    "classify": ("taxonomy", "corpus", "out", "model"),
    "score": ("out",),
    "report": ("out",),
    "sample-errors": ("out",),
}


class UsageError(Exception):
    """Bad command line or configuration; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # one-line diagnostic instead of usage dump
        raise UsageError(f"{self.prog}: {message}")


def _split_list(values: Sequence[str] | str | None) -> list[str]:
    if values is None:
        return []
    if isinstance(values, str):
        values = [values]
    out = []
    for v in values:
        out.extend(x.strip() for x in str(v).split(",") if x.strip())
    return out


def _floats(values, name: str) -> list[float]:
    if isinstance(values, (int, float)):
        values = [values]
    try:
        return [float(v) for v in _split_list(values)]
    except ValueError:
        raise UsageError(f"--{name}: malformed list {values!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML or JSON file with default settings")
    common.add_argument("--taxonomy", help="taxonomy JSON file")
    common.add_argument("--corpus", help="corpus JSONL or CSV file")
    common.add_argument("--out", help="run/output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    gw = _Parser(add_help=False)
    gw.add_argument("--mock", action="store_true", default=None,
                    help="use the offline mock model and embedder")
    gw.add_argument("--mock-table", help="JSON file with mock answers {table, confusion}")
    gw.add_argument("--endpoint", help=f"inference server URL (env {ENDPOINT_ENV})")
    gw.add_argument("--embed-model", help="embedding model id for the ed criterion")
    gw.add_argument("--parallel", type=int, help="concurrent records (default 4)")
    gw.add_argument("--timeout", type=float)
    gw.add_argument("--retries", type=int)

    parser = _Parser(prog="areatag", description="Classify scientific texts into a research taxonomy.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("ingest", parents=[common], help="parse a corpus file and report quarantined rows")

    p = sub.add_parser("clean", parents=[common], help="clean texts and drop rare classes")
    p.add_argument("--min-class-count", type=int)
    p.add_argument("--min-topic-count", type=int)

    p = sub.add_parser("classify", parents=[common, gw], help="run the model x temperature x strategy grid")
    p.add_argument("--model", nargs="+")
    p.add_argument("--temperature", nargs="+")
    p.add_argument("--strategy", nargs="+", choices=["zero", "one", "few", "chain"])
    p.add_argument("--exemplars", type=int, help="few-shot exemplar count (default 3)")
    p.add_argument("--exemplar-pool", help="held-out records to draw exemplars from")
    p.add_argument("--seed", type=int)
    p.add_argument("--min-class-count", type=int)
    p.add_argument("--no-retry", action="store_true", default=None,
                   help="count off-list chain answers as wrong without re-asking")
    p.add_argument("--zero-shot-taxonomy", action="store_true", default=None,
                   help="embed the taxonomy outline in zero-shot prompts")

    p = sub.add_parser("score", parents=[common, gw], help="score predictions of a finished run")
    p.add_argument("--criterion", nargs="+")
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("report", parents=[common], help="print accuracy tables")
    p.add_argument("--layout", choices=["hierarchy", "temperature-sweep"])
    p.add_argument("--criterion", dest="sweep_criterion",
                   help="criterion for the temperature sweep (default em)")

    p = sub.add_parser("sample-errors", parents=[common], help="sample misclassified texts for review")
    p.add_argument("-n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", dest="only_strategy", help="restrict to one strategy")
    p.add_argument("--model", dest="only_model", help="restrict to one model id")
    return parser


def _read_config_file(path: str) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text) if p.suffix.lower() == ".toml" else json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a table/object")
    return {k.replace("-", "_"): v for k, v in data.items()}


@dataclass
class CliConfig:
    command: str
    values: dict = field(default_factory=dict)
    verbose: bool = False

    def __getattr__(self, name: str):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None


def resolve_config(args: argparse.Namespace, environ: dict[str, str] | None = None) -> CliConfig:
    """Merge defaults < config file < environment < flags, then validate."""
    environ = os.environ if environ is None else environ
    values = dict(DEFAULTS)
    if args.config:
        from_file = _read_config_file(args.config)
        unknown = set(from_file) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"config file: unknown key {sorted(unknown)[0]!r}")
        values.update(from_file)
    for key, env in ENV_KEYS.items():
        if environ.get(env):
            values[key] = environ[env]
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            values[key] = value

    cmd = args.command
    for key in REQUIRED[cmd]:
        if not values.get(key):
            raise UsageError(f"{cmd}: missing required --{key.replace('_', '-')}")

    values["model"] = _split_list(values["model"])
    values["strategy"] = _split_list(values["strategy"])
    values["criterion"] = _split_list(values["criterion"])
    values["temperature"] = _floats(values["temperature"], "temperature")
    for t in values["temperature"]:
        try:
            check_temperature(t)
        except ValueError:
            raise UsageError(f"--temperature: {t} is outside the allowed range [0,1]") from None
    if values["min_class_count"] is None:
        # the rare-class filter belongs to `clean`; `classify` expects cleaned input
        values["min_class_count"] = 100 if cmd == "clean" else 0
    for key in ("seed", "parallel", "exemplars", "min_class_count", "n", "retries"):
        try:
            values[key] = int(values[key])
        except (TypeError, ValueError):
            raise UsageError(f"--{key.replace('_', '-')}: expected an integer, got {values[key]!r}") from None
    if values["parallel"] < 1:
        raise UsageError("--parallel must be >= 1")
    if not 0.0 < float(values["threshold"]) < 1.0:
        raise UsageError("--threshold must lie in (0,1)")
    values["threshold"] = float(values["threshold"])
    if values["n"] < 0:
        raise UsageError("-n must be >= 0")

    if cmd == "score":
        try:
            crits = [MatchCriterion.parse(c, threshold=values["threshold"],
                                          embed_model=values["embed_model"]) for c in values["criterion"]]
        except ValueError as exc:
            raise UsageError(f"--criterion: {exc}") from None
        if any(c.kind == "ed" for c in crits) and not values["mock"] and not values["embed_model"]:
            raise UsageError("--criterion ed needs --embed-model (or --mock for the mock embedder)")
    return CliConfig(cmd, values, bool(getattr(args, "verbose", False)))


def _progress(msg: str) -> None:
    print(f"[areatag] {msg}", file=sys.stderr, flush=True)


def _oracle_mock(cfg: CliConfig) -> MockModel:
    """Mock answering each record's gold path, keyed by its cleaned title."""
    if cfg.mock_table:
        data = json.loads(Path(cfg.mock_table).read_text(encoding="utf-8"))
        return MockModel(data.get("table", {}), data.get("confusion", {}), data.get("default", ""))
    grid = _grid_config(cfg)
    prep = prepare(grid)
    table = {}
    for r in sorted(prep.records + prep.pool, key=lambda r: (-len(r.title), r.doi)):
        if r.title:
            table.setdefault(r.title, {"domain": r.label.domain, "subject": r.label.subject,
                                       "topic": r.label.topic})
    return MockModel(table)


def _gateway(cfg: CliConfig):
    if cfg.mock:
        model = _oracle_mock(cfg) if cfg.command == "classify" else MockModel({})
        models = cfg.model or ["mock"]
        return MockGateway({m: model for m in models}, max_in_flight=cfg.parallel,
                           embed_models=(MOCK_EMBED_MODEL,) + ((cfg.embed_model,) if cfg.embed_model else ()))
    return HttpGateway(cfg.endpoint, timeout=float(cfg.timeout), retries=cfg.retries,
                       max_in_flight=cfg.parallel)


def _grid_config(cfg: CliConfig) -> GridConfig:
    return GridConfig(
        taxonomy_path=cfg.taxonomy,
        corpus_path=cfg.corpus,
        out_dir=cfg.out,
        models=cfg.model,
        strategies=cfg.strategy,
        temperatures=cfg.temperature,
        criteria=cfg.criterion,
        threshold=cfg.threshold,
        embed_model=cfg.embed_model,
        exemplars=cfg.exemplars,
        exemplar_pool_path=cfg.exemplar_pool,
        seed=cfg.seed,
        parallel=cfg.parallel,
        min_class_count=cfg.min_class_count,
        retry_off_list=not cfg.no_retry,
        zero_shot_taxonomy=bool(cfg.zero_shot_taxonomy),
    )


# --------------------------------------------------------------------------- commands


def cmd_ingest(cfg: CliConfig) -> int:
    taxonomy = load_taxonomy_file(cfg.taxonomy) if cfg.taxonomy else None
    quarantine: list[QuarantinedRow] = []
    records = ingest(cfg.corpus, taxonomy, quarantine)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "raw.jsonl")
    _atomic_write(out / "quarantine.json", json.dumps(
        [q.__dict__ for q in quarantine], indent=2, ensure_ascii=False) + "\n")
    print(f"ingested {len(records)} records, quarantined {len(quarantine)}")
    return 0


def cmd_clean(cfg: CliConfig) -> int:
    taxonomy = load_taxonomy_file(cfg.taxonomy) if cfg.taxonomy else None
    records = ingest(cfg.corpus, taxonomy)
    clean, stats = filter_corpus(records, cfg.min_class_count,
                                 None if cfg.min_topic_count is None else int(cfg.min_topic_count))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(clean, out / "clean.jsonl")
    _atomic_write(out / "corpus_stats.json", json.dumps(stats.to_json(), indent=2, ensure_ascii=False) + "\n")
    print(f"retained {stats.retained} of {stats.ingested} records "
          f"(empty abstract {stats.dropped_empty_abstract}, rare subject "
          f"{stats.dropped_low_frequency_subject}, rare topic {stats.dropped_low_frequency_topic})")
    return 0


def cmd_classify(cfg: CliConfig) -> int:
    grid = _grid_config(cfg)
    manifest = run_grid(grid, _gateway(cfg), progress=_progress)
    bad = manifest.incomplete_cells()
    for cell_id in bad:
        _progress(f"incomplete {cell_id}: {manifest.cells[cell_id]['error']}")
    print(f"{len(manifest.cells) - len(bad)}/{len(manifest.cells)} cells complete in {cfg.out}")
    return 1 if bad else 0


def cmd_score(cfg: CliConfig) -> int:
    manifest = RunManifest.load(cfg.out)
    criteria = [MatchCriterion.parse(c, threshold=cfg.threshold, embed_model=cfg.embed_model)
                for c in cfg.criterion]
    needs_embed = any(c.kind == "ed" for c in criteria)
    gateway = _gateway(cfg) if needs_embed else None
    paths = score_run(manifest, criteria, gateway)
    _progress(f"wrote {len(paths)} outcome files")
    return 0


def cmd_report(cfg: CliConfig) -> int:
    _, text = write_report(cfg.out, cfg.layout, cfg.sweep_criterion)
    sys.stdout.write(text)
    return 0


def cmd_sample_errors(cfg: CliConfig) -> int:
    out = Path(cfg.out)
    records = load_clean_records(out / "records.jsonl") if (out / "records.jsonl").exists() else []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        samples = sample_errors(load_outcomes(out), cfg.n, cfg.seed, records,
                                strategy=cfg.only_strategy, model_id=cfg.only_model)
    for w in caught:
        _progress(str(w.message))
    _atomic_write(out / "error_sample.jsonl",
                  "".join(json.dumps(s.to_json(), ensure_ascii=False) + "\n" for s in samples))
    for s in samples:
        print(json.dumps(s.to_json(), ensure_ascii=False))
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "clean": cmd_clean,
    "classify": cmd_classify,
    "score": cmd_score,
    "report": cmd_report,
    "sample-errors": cmd_sample_errors,
}


def parse_and_dispatch(argv: Sequence[str] | None = None,
                       environ: dict[str, str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args, environ)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if cfg.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, ResumeError, TaxonomyError, CorpusError, FileNotFoundError) as exc:
        print(f"areatag {cfg.command}: {exc}", file=sys.stderr)
        return 2
    except IncompleteRunError as exc:
        print(f"areatag {cfg.command}: {exc}", file=sys.stderr)
        return 1
    except GatewayError as exc:
        print(f"areatag {cfg.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(parse_and_dispatch())
