from __future__ import annotations

import json
import re
from pathlib import Path

import pytest

from areatag.corpus import filter_corpus, ingest
from areatag.gateway import MockGateway, MockModel
from areatag.taxonomy import load_taxonomy_file

FIXTURES = Path(__file__).parent / "fixtures"
SMALL_TAXONOMY = FIXTURES / "taxonomy_small.json"
CORPUS_30 = FIXTURES / "corpus_30.jsonl"
EXEMPLAR_POOL = FIXTURES / "exemplar_pool.jsonl"
CORPUS_50 = FIXTURES / "corpus_50_preprocess.jsonl"
GOLDEN = FIXTURES / "prompts"

MARKER = re.compile(r"\b(REC-\d{3}|POOL-\d{2})\b")


def marker_table(*paths: Path) -> dict[str, dict[str, str | None]]:
    """Gold-answer mock table keyed by the marker token in each abstract."""
    table = {}
    for path in paths:
        for line in path.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            marker = MARKER.search(row["abstract"]).group(1)
            table[marker] = {"domain": row["domain"], "subject": row["subject"], "topic": row["topic"]}
    return table


@pytest.fixture(scope="session")
def small_taxonomy():
    return load_taxonomy_file(SMALL_TAXONOMY)


@pytest.fixture(scope="session")
def records30(small_taxonomy):
    clean, _ = filter_corpus(ingest(CORPUS_30, small_taxonomy), 0)
    return clean


@pytest.fixture(scope="session")
def pool(small_taxonomy):
    clean, _ = filter_corpus(ingest(EXEMPLAR_POOL, small_taxonomy), 0)
    return clean


@pytest.fixture()
def oracle_gateway():
    model = MockModel(marker_table(CORPUS_30, EXEMPLAR_POOL))
    return MockGateway({"mock": model})


# ---------------------------------------------------------------- acceptance summary

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _acceptance[name] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance.items():
        label = {"PASSED": "PASS", "FAILED": "FAIL", "SKIPPED": "SKIP"}.get(outcome, outcome)
        terminalreporter.write_line(f"{label:4}  {name}")


def golden_prompts(taxonomy, records, pool) -> dict[str, str]:
    """Every prompt shape the golden fixtures cover, keyed by fixture file name."""
    from areatag.prompting import FewShot, OneShot, ZeroShot, render_chain_stage, render_icl
    from areatag.taxonomy import Level

    record = records[0]
    chain = [
        (Level.DOMAIN, ()),
        (Level.SUBJECT, ("Life Sciences",)),
        (Level.TOPIC, ("Life Sciences", "Biology")),
    ]
    out = {
        "zero.txt": render_icl(ZeroShot(), taxonomy, record).text,
        "zero_taxonomy.txt": render_icl(ZeroShot(embed_taxonomy=True), taxonomy, record).text,
        "one.txt": render_icl(OneShot(pool[0]), taxonomy, record).text,
        "few.txt": render_icl(FewShot(tuple(pool[:3])), taxonomy, record).text,
    }
    for level, ancestors in chain:
        options = taxonomy.options_at(ancestors)
        out[f"chain_{level.label}.txt"] = render_chain_stage(level, options, record, ancestors).text
    return out
