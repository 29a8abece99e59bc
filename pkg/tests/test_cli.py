import json

import pytest
from click.testing import CliRunner

from cli import cli

RUN_ARGS = [
    "run", "--synthetic", "--n-contents", "60", "--n-requests", "300", "--per-cp", "20",
    "--z-sweep", "0,10,20", "--fast",
]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def finished_run(runner, tmp_path):
    out_dir = tmp_path / "results"
    db_file = tmp_path / "results.db"
    result = runner.invoke(cli, RUN_ARGS + ["--out-dir", str(out_dir), "--db", str(db_file)])
    assert result.exit_code == 0, result.output
    summary = [line for line in result.output.splitlines() if line.startswith("run ")][-1]
    return out_dir, db_file, summary.split()[1].rstrip(":"), result.output


def test_run_writes_reports(finished_run):
    out_dir, _, run_id, output = finished_run
    for name in ("report.csv", "fig_chr.dat", "fig_delivery_time.dat", "feature_ranking.csv", "chain.jsonl"):
        assert (out_dir / name).exists()
    assert "ledger verified=True reconciled=True" in output
    assert len(run_id) == 16
    assert len((out_dir / "report.csv").read_text(encoding="utf-8").splitlines()) == 1 + 3 * 2 * 3


def test_run_rejects_bad_config(runner, tmp_path):
    result = runner.invoke(cli, RUN_ARGS[:-3] + ["--z-sweep", "0,999", "--no-db", "--out-dir", str(tmp_path)])
    assert result.exit_code == 1
    assert "Invalid scenario config" in result.output


def test_run_from_config_file(runner, tmp_path):
    config = tmp_path / "scenario.env"
    config.write_text("SYNTHETIC=true\nN_CONTENTS=30\nN_REQUESTS=100\nCP_COUNT=2\nPER_CP=10\nZ_SWEEP=0,10\nFAST=true\n",
                      encoding="utf-8")
    result = runner.invoke(cli, ["run", "--config", str(config), "--arch", "bcdn", "--no-db", "--out-dir", str(tmp_path / "o")])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "o" / "report.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 + 2 * 2
    assert all(",BCdn," in line for line in lines[1:])


def test_verify_chain(runner, finished_run):
    out_dir = finished_run[0]
    result = runner.invoke(cli, ["verify-chain", str(out_dir / "chain.jsonl")])
    assert result.exit_code == 0
    assert "OK: " in result.output


def test_verify_chain_detects_tampering(runner, finished_run, tmp_path):
    lines = (finished_run[0] / "chain.jsonl").read_text(encoding="utf-8").splitlines(keepends=True)
    assert len(lines) > 3
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_text("".join(lines[:2] + lines[3:]), encoding="utf-8")
    result = runner.invoke(cli, ["verify-chain", str(tampered)])
    assert result.exit_code == 1
    assert "FAILED" in result.output


def test_verify_chain_rejects_undecodable_byte(runner, finished_run, tmp_path):
    data = bytearray((finished_run[0] / "chain.jsonl").read_bytes())
    data[len(data) // 2] = 0xFF
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_bytes(bytes(data))
    result = runner.invoke(cli, ["verify-chain", str(tampered)])
    assert result.exit_code == 1
    assert "FAILED" in result.output
    assert not isinstance(result.exception, UnicodeDecodeError)


def test_reports(runner, finished_run):
    _, db_file, run_id, _ = finished_run
    result = runner.invoke(cli, ["reports", "--run-id", run_id, "--db", str(db_file)])
    assert result.exit_code == 0
    rows = [json.loads(line) for line in result.output.splitlines() if line.startswith("{")]
    assert len(rows) == 18
    assert {row["run_id"] for row in rows} == {run_id}
    missing = runner.invoke(cli, ["reports", "--run-id", "nope", "--db", str(db_file)])
    assert missing.exit_code == 1


def test_consensus_demo(runner):
    result = runner.invoke(cli, ["consensus-demo", "--blocks", "2", "--equivocating", "3"])
    assert result.exit_code == 0, result.output
    body = json.loads(result.output[result.output.index("{"):])
    assert body["committed"] == 2
    assert body["faulty"] == [3]
    assert body["safety_holds"] is True


def test_consensus_demo_bad_validator_count(runner):
    result = runner.invoke(cli, ["consensus-demo", "--validators", "5"])
    assert result.exit_code == 1


def test_dump_trace(runner, tmp_path):
    out = tmp_path / "trace.csv"
    result = runner.invoke(cli, ["dump-trace", "--synthetic", "--n-contents", "600", "--n-requests", "50", str(out)])
    assert result.exit_code == 0, result.output
    assert f"50 requests written to {out}" in result.output
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "userId,movieId,timestamp"
    assert len(lines) == 51
