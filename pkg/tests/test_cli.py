from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from picl.cli import main


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def _write_pool(path: Path) -> None:
    records = [
        {"id": "d1", "problem": "Add 2 and 2 together.", "solution": "It is \\boxed{4}."},
        {"id": "d2", "problem": "Multiply 3 by 3 now.", "solution": "It is \\boxed{9}."},
        {"id": "d3", "problem": "Subtract 1 from 5 quickly.", "solution": "It is \\boxed{4}."},
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


def _write_mock(path: Path, *, n_items: int = 4, confused_item: int | None = 1,
                failing_item: int | None = None) -> None:
    scripts = []
    for i in range(n_items):
        tokens = ["Okay."]
        if confused_item is not None and i == confused_item:
            tokens.append(" wait")
        tokens.append(f" the answer is \\boxed{{{i}}}.")
        script = {
            "key": f"Q{i:03d}:",
            "steps": [{"token": t, "logprob": 0.0, "alternatives": [[t, 0.0]]} for t in tokens],
        }
        if failing_item is not None and i == failing_item:
            script["fail"] = True
        scripts.append(script)
    completions = [
        {
            "key": "signs of confusion",
            "response": "Yes. confusion{needs a worked example for the addition}",
        }
    ]
    path.write_text(json.dumps({"scripts": scripts, "completions": completions}))


def _write_dataset(path: Path, n_items: int = 4, wrong: tuple[int, ...] = (3,)) -> None:
    lines = []
    for i in range(n_items):
        gold = "999" if i in wrong else str(i)
        lines.append(
            json.dumps({"id": f"q{i:03d}", "question": f"Q{i:03d}: compute item {i}.", "answer": gold})
        )
    path.write_text("\n".join(lines) + "\n")


def test_pool_embed_writes_sidecar(runner, tmp_path) -> None:
    pool_path = tmp_path / "pool.jsonl"
    _write_pool(pool_path)
    result = runner.invoke(main, ["pool", "embed", "--pool", str(pool_path)])
    assert result.exit_code == 0, result.output
    sidecar = Path(f"{pool_path}.embeddings.json")
    assert sidecar.exists()
    payload = json.loads(sidecar.read_text())
    assert payload["embedder"] == "tfidf"
    assert len(payload["vectors"]) == 3
    assert "embedded 3 demos" in result.output


def test_run_single_query_with_insertion(runner, tmp_path) -> None:
    pool_path = tmp_path / "pool.jsonl"
    mock_path = tmp_path / "mock.json"
    out_path = tmp_path / "transcript.json"
    _write_pool(pool_path)
    _write_mock(mock_path, n_items=2, confused_item=0)
    result = runner.invoke(
        main,
        [
            "run",
            "--query", "Q000: compute item 0.",
            "--mode", "picl",
            "--backend", "mock",
            "--mock-file", str(mock_path),
            "--pool", str(pool_path),
            "--out", str(out_path),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "answer: 0" in result.output
    transcript = json.loads(out_path.read_text())
    assert transcript["mode"] == "picl"
    kinds = [seg["type"] for seg in transcript["segments"]]
    assert "inserted_demos" in kinds
    assert transcript["interventions"][0]["trigger_token"] == "wait"


def test_run_zero_shot_without_pool(runner, tmp_path) -> None:
    mock_path = tmp_path / "mock.json"
    _write_mock(mock_path, n_items=1, confused_item=None)
    result = runner.invoke(
        main,
        ["run", "--query", "Q000: compute item 0.", "--mode", "zero_shot",
         "--backend", "mock", "--mock-file", str(mock_path)],
    )
    assert result.exit_code == 0, result.output
    assert "answer: 0" in result.output


def test_eval_writes_reports_and_figures(runner, tmp_path) -> None:
    pool_path = tmp_path / "pool.jsonl"
    mock_path = tmp_path / "mock.json"
    data_path = tmp_path / "data.jsonl"
    out_dir = tmp_path / "reports"
    _write_pool(pool_path)
    _write_mock(mock_path)
    _write_dataset(data_path)
    result = runner.invoke(
        main,
        [
            "eval",
            "--dataset", str(data_path),
            "--modes", "zero_shot,picl",
            "--backend", "mock",
            "--mock-file", str(mock_path),
            "--pool", str(pool_path),
            "--out-dir", str(out_dir),
            "--workers", "2",
        ],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((out_dir / "report.json").read_text())
    assert {s["mode"] for s in report["summaries"]} == {"zero_shot", "picl"}
    for summary in report["summaries"]:
        assert summary["accuracy"] == 0.75  # item 3's gold is wrong on purpose
    with (out_dir / "report_items.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 8
    assert (out_dir / "eval_accuracy.png").stat().st_size > 0
    assert (out_dir / "eval_tokens.png").stat().st_size > 0


def test_eval_strict_fails_on_failed_transcripts(runner, tmp_path) -> None:
    mock_path = tmp_path / "mock.json"
    data_path = tmp_path / "data.jsonl"
    _write_mock(mock_path, n_items=2, confused_item=None, failing_item=1)
    _write_dataset(data_path, n_items=2, wrong=())
    args = [
        "eval", "--dataset", str(data_path), "--modes", "zero_shot",
        "--backend", "mock", "--mock-file", str(mock_path),
        "--out-dir", str(tmp_path / "reports"), "--no-figures",
    ]
    ok = runner.invoke(main, args)
    assert ok.exit_code == 0
    strict = runner.invoke(main, args + ["--strict"])
    assert strict.exit_code == 1


def test_sweep_writes_table_and_figure(runner, tmp_path) -> None:
    pool_path = tmp_path / "pool.jsonl"
    mock_path = tmp_path / "mock.json"
    data_path = tmp_path / "data.jsonl"
    out_dir = tmp_path / "reports"
    _write_pool(pool_path)
    _write_mock(mock_path)
    _write_dataset(data_path)
    result = runner.invoke(
        main,
        [
            "sweep",
            "--dataset", str(data_path),
            "--parameter", "r",
            "--values", "1,2",
            "--backend", "mock",
            "--mock-file", str(mock_path),
            "--pool", str(pool_path),
            "--out-dir", str(out_dir),
        ],
    )
    assert result.exit_code == 0, result.output
    with (out_dir / "sweep_r.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert [r["value"] for r in rows] == ["1", "2"]
    assert (out_dir / "sweep_r.png").stat().st_size > 0


def test_entropy_exports_csv_and_figure(runner, tmp_path) -> None:
    mock_path = tmp_path / "mock.json"
    data_path = tmp_path / "data.jsonl"
    out_csv = tmp_path / "out" / "entropy.csv"
    out_csv.parent.mkdir()
    _write_mock(mock_path, n_items=2)
    _write_dataset(data_path, n_items=2, wrong=())
    result = runner.invoke(
        main,
        [
            "entropy",
            "--dataset", str(data_path),
            "--backend", "mock",
            "--mock-file", str(mock_path),
            "--out", str(out_csv),
        ],
    )
    assert result.exit_code == 0, result.output
    with out_csv.open() as handle:
        rows = list(csv.DictReader(handle))
    assert rows, "expected entropy rows"
    assert {"query_id", "position", "entropy_nats", "token_text", "is_interrupt"} <= set(rows[0])
    assert (out_csv.parent / "entropy_density.png").stat().st_size > 0
    assert "wrote" in result.output


def test_mock_backend_requires_mock_file(runner, tmp_path) -> None:
    data_path = tmp_path / "data.jsonl"
    _write_dataset(data_path, n_items=1, wrong=())
    result = runner.invoke(
        main, ["eval", "--dataset", str(data_path), "--backend", "mock",
               "--out-dir", str(tmp_path)],
    )
    assert result.exit_code != 0
    assert "--mock-file" in result.output


def test_config_file_with_flag_overrides(runner, tmp_path) -> None:
    mock_path = tmp_path / "mock.json"
    config_path = tmp_path / "config.json"
    out_path = tmp_path / "t.json"
    _write_mock(mock_path, n_items=1, confused_item=None)
    config_path.write_text(json.dumps({"mode": "zero_shot", "max_tokens": 64}))
    result = runner.invoke(
        main,
        ["run", "--query", "Q000: compute item 0.", "--config", str(config_path),
         "--backend", "mock", "--mock-file", str(mock_path), "--out", str(out_path)],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(out_path.read_text())["mode"] == "zero_shot"
