import json
import subprocess
import sys

import pytest

from areatag.cli import build_parser, parse_and_dispatch, resolve_config

from conftest import CORPUS_30, CORPUS_50, EXEMPLAR_POOL, SMALL_TAXONOMY


def run(argv, env=None):
    return parse_and_dispatch([str(a) for a in argv], env or {})


def classify_args(out, *extra):
    return ["classify", "--taxonomy", SMALL_TAXONOMY, "--corpus", CORPUS_30, "--out", out,
            "--exemplar-pool", EXEMPLAR_POOL, "--model", "mock", "--mock", *extra]


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["classify", "--help"])
    assert info.value.code == 0
    assert "--temperature" in capsys.readouterr().out


def test_missing_taxonomy(tmp_path, capsys):
    code = run(["classify", "--corpus", CORPUS_30, "--out", tmp_path, "--model", "m"])
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert "--taxonomy" in err and len(err.splitlines()) == 1


def test_temperature_out_of_range(tmp_path, capsys):
    code = run(classify_args(tmp_path, "--temperature", "1.5"))
    assert code == 2
    assert "[0,1]" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["classify", "--bogus"],
    ["classify", "--temperature", "0.2,abc"],
    ["frobnicate"],
])
def test_usage_errors_exit_two(tmp_path, argv, capsys):
    assert run([*argv, "--out", tmp_path] if argv[0] == "classify" else argv) == 2
    assert len(capsys.readouterr().err.strip().splitlines()) == 1


def test_ed_without_embedder_rejected(tmp_path, capsys):
    assert run(["score", "--out", tmp_path, "--criterion", "em", "ed"]) == 2
    assert "--embed-model" in capsys.readouterr().err


def test_precedence(tmp_path):
    cfg_file = tmp_path / "cfg.toml"
    cfg_file.write_text('seed = 1\nparallel = 2\nmodel = ["from-file"]\nexemplars = 4\n')
    args = build_parser().parse_args(
        ["classify", "--config", str(cfg_file), "--taxonomy", "t", "--corpus", "c", "--out", "o",
         "--seed", "9"])
    cfg = resolve_config(args, {"AREATAG_SEED": "5", "AREATAG_PARALLEL": "3", "AREATAG_MODEL": "from-env"})
    assert cfg.seed == 9          # flag beats env
    assert cfg.parallel == 3      # env beats file
    assert cfg.model == ["from-env"]
    assert cfg.exemplars == 4     # file beats default
    assert cfg.threshold == 0.7   # default
    again = resolve_config(args, {"AREATAG_SEED": "5", "AREATAG_PARALLEL": "3", "AREATAG_MODEL": "from-env"})
    assert again == cfg


def test_json_config_and_unknown_key(tmp_path, capsys):
    good = tmp_path / "c.json"
    good.write_text(json.dumps({"temperature": [0.2, 0.4], "strategy": "chain"}))
    args = build_parser().parse_args(["classify", "--config", str(good), "--taxonomy", "t",
                                      "--corpus", "c", "--out", "o", "--model", "m"])
    cfg = resolve_config(args, {})
    assert cfg.temperature == [0.2, 0.4] and cfg.strategy == ["chain"]
    bad = tmp_path / "b.json"
    bad.write_text('{"colour": 1}')
    assert run(["report", "--config", bad, "--out", tmp_path]) == 2
    assert "colour" in capsys.readouterr().err


def test_comma_and_space_lists(tmp_path):
    args = build_parser().parse_args(["classify", "--taxonomy", "t", "--corpus", "c", "--out", "o",
                                      "--model", "a,b", "c", "--temperature", "0.2,0.4", "1"])
    cfg = resolve_config(args, {})
    assert cfg.model == ["a", "b", "c"]
    assert cfg.temperature == [0.2, 0.4, 1.0]


def test_report_on_missing_run(tmp_path, capsys):
    assert run(["report", "--out", tmp_path / "nothing"]) == 2
    assert "manifest" in capsys.readouterr().err


def test_end_to_end_mock(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(classify_args(out, "--temperature", "0.8", "--parallel", "2")) == 0
    capsys.readouterr()
    assert run(["score", "--out", out, "--mock"]) == 0
    assert run(["report", "--out", out]) == 0
    report = capsys.readouterr().out
    assert "Prompt Chaining (temperature 0.8)" in report
    assert "100.0" in report
    assert run(["report", "--out", out, "--layout", "temperature-sweep", "--criterion", "sd@0.7"]) == 0
    assert run(["sample-errors", "--out", out, "-n", "3", "--seed", "1"]) == 0
    captured = capsys.readouterr()
    assert "only 0 misclassified" in captured.err
    assert (out / "error_sample.jsonl").read_text() == ""
    written = {p.relative_to(tmp_path).parts[0] for p in tmp_path.rglob("*")}
    assert written == {"run"}


def test_incomplete_cell_exits_one(tmp_path, capsys):
    out = tmp_path / "run"
    # nothing listens on the discard port, so every request fails
    code = run(["classify", "--taxonomy", SMALL_TAXONOMY, "--corpus", CORPUS_30, "--out", out,
                "--model", "mock", "--endpoint", "http://127.0.0.1:9", "--retries", "0",
                "--timeout", "1", "--strategy", "chain", "--temperature", "0.8"])
    assert code == 1
    assert "incomplete" in capsys.readouterr().err
    assert run(["report", "--out", out]) == 1


def test_ingest_and_clean(tmp_path, capsys):
    out = tmp_path / "prep"
    assert run(["ingest", "--corpus", CORPUS_50, "--out", out]) == 0
    assert "ingested 50 records" in capsys.readouterr().out
    assert run(["clean", "--corpus", CORPUS_50, "--out", out, "--min-class-count", "5"]) == 0
    assert "retained 39 of 50" in capsys.readouterr().out
    stats = json.loads((out / "corpus_stats.json").read_text())
    assert stats["dropped_empty_abstract"] == 8
    assert len((out / "clean.jsonl").read_text().splitlines()) == 39


def test_clean_defaults_to_hundred(tmp_path, capsys):
    assert run(["clean", "--corpus", CORPUS_50, "--out", tmp_path]) == 0
    assert "retained 0 of 50" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "areatag", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("areatag ")
