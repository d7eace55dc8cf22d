import json
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from zerocard.cli import main

FIXTURES = Path(__file__).resolve().parent / "fixtures" / "corpus"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One ingest -> embed -> generate -> train pipeline shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    config = {
        "tables_dir": str(FIXTURES / "tables"),
        "schema_dir": str(FIXTURES / "schemas"),
        "embeddings": str(root / "embeddings.zcemb"),
        "model": str(root / "model.zcmdl"),
        "workload": str(root / "workload.jsonl"),
        "report": str(root / "report.json"),
        "seed": 11,
        "queries_per_table": 30,
        "sample_rate": 0.2,
        "hyper": {
            "d": 16,
            "h": 12,
            "m": 3,
            "k": 2,
            "n_heads": 2,
            "expert_hidden": [16],
            "gate_hidden": [8],
            "est_hidden": [32],
        },
        "train": {"epochs": 3, "batch_size": 16},
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config), encoding="utf-8")
    for cmd in (
        ["--config", str(cfg_path), "embed-stub"],
        ["--config", str(cfg_path), "gen-queries"],
        ["--config", str(cfg_path), "train"],
    ):
        assert main(cmd) == 0
    return root, cfg_path


def run_cli(args):
    proc = subprocess.run(
        [sys.executable, "-m", "zerocard.cli", *args],
        capture_output=True,
        text=True,
        timeout=300,
    )
    return proc


class TestPipeline:
    def test_ingest_manifest(self, workspace, capsys):
        root, cfg = workspace
        assert main(["--config", str(cfg), "ingest"]) == 0
        manifest = json.loads(capsys.readouterr().out)
        assert [t["table_id"] for t in manifest] == ["synth_000", "synth_001", "synth_002"]
        assert all(t["n_rows"] > 0 for t in manifest)

    def test_artifacts_exist(self, workspace):
        root, _ = workspace
        assert (root / "embeddings.zcemb").exists()
        assert (root / "workload.jsonl").exists()
        assert (root / "model.zcmdl").exists()

    def test_eval_produces_report_with_no_zerocard_failures(self, workspace, capsys):
        root, cfg = workspace
        assert main(["--config", str(cfg), "eval", "--method", "zerocard,avi,minsel,sample"]) == 0
        table = capsys.readouterr().out
        assert "zerocard" in table
        report = json.loads((root / "report.json").read_text())
        by_method = {r["method"]: r for r in report}
        assert by_method["zerocard"]["failure_rate"] == 0.0
        assert by_method["zerocard"]["n_queries"] == 90

    def test_estimate_known_query(self, workspace, capsys):
        root, cfg = workspace
        query = json.dumps(
            {"table_id": "synth_000", "predicates": [{"column": "slot_index", "op": "<=", "value": 50}]}
        )
        assert main(["--config", str(cfg), "estimate", "--query", query]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["method"] == "zerocard"
        assert 1 <= out["estimate"] <= 147

    def test_estimate_unknown_column_is_machine_readable(self, workspace):
        root, cfg = workspace
        query = json.dumps(
            {"table_id": "synth_000", "predicates": [{"column": "nope", "op": "=", "value": 1}]}
        )
        proc = run_cli(["--config", str(cfg), "estimate", "--query", query])
        assert proc.returncode == 1
        err = json.loads(proc.stderr)
        assert err["error"] == "UnknownColumn"

    def test_missing_config_value(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"tables_dir": str(FIXTURES / "tables")}))
        proc = run_cli(["--config", str(cfg), "gen-queries"])
        assert proc.returncode == 1
        assert json.loads(proc.stderr)["error"] == "ConfigError"

    def test_flag_overrides_config(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        alt = tmp_path / "w2.jsonl"
        assert main(["--config", str(cfg), "--workload", str(alt), "gen-queries"]) == 0
        capsys.readouterr()
        assert alt.exists()

    def test_gen_queries_deterministic(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["--config", str(cfg), "--workload", str(a), "gen-queries"]) == 0
        assert main(["--config", str(cfg), "--workload", str(b), "gen-queries"]) == 0
        capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()


class TestServe:
    def test_round_trip(self, workspace):
        root, cfg = workspace
        proc = subprocess.Popen(
            [sys.executable, "-m", "zerocard.cli", "--config", str(cfg), "serve", "--port", "0"],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        try:
            line = proc.stdout.readline()
            port = json.loads(line)["listening"]
            with socket.create_connection(("127.0.0.1", port), timeout=10) as sock:
                f = sock.makefile("rw", encoding="utf-8")
                request = {
                    "table_id": "synth_000",
                    "predicates": [{"column": "slot_index", "op": "<=", "value": 50}],
                }
                f.write(json.dumps(request) + "\n")
                f.flush()
                reply = json.loads(f.readline())
                assert reply["method"] == "zerocard"
                assert 1 <= reply["estimate"] <= 147
                # errors come back as JSON too, connection stays open
                f.write(json.dumps({"table_id": "missing"}) + "\n")
                f.flush()
                assert "error" in json.loads(f.readline())
        finally:
            proc.terminate()
            proc.wait(timeout=10)

    def test_concurrent_connections(self, workspace):
        root, cfg = workspace
        proc = subprocess.Popen(
            [sys.executable, "-m", "zerocard.cli", "--config", str(cfg), "serve", "--port", "0"],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        try:
            port = json.loads(proc.stdout.readline())["listening"]
            request = json.dumps(
                {"table_id": "synth_001", "predicates": [{"column": "order_id", "op": ">=", "value": 0}]}
            )
            socks = [socket.create_connection(("127.0.0.1", port), timeout=10) for _ in range(4)]
            files = [s.makefile("rw", encoding="utf-8") for s in socks]
            for f in files:  # interleave: all requests first, then all replies
                f.write(request + "\n")
                f.flush()
            replies = [json.loads(f.readline()) for f in files]
            assert len({r["estimate"] for r in replies}) == 1
            assert all(r["method"] == "zerocard" for r in replies)
            for s in socks:
                s.close()
        finally:
            proc.terminate()
            proc.wait(timeout=10)


class TestParser:
    def test_unknown_method_rejected(self, workspace):
        root, cfg = workspace
        proc = run_cli(["--config", str(cfg), "eval", "--method", "psychic"])
        assert proc.returncode == 1
        assert json.loads(proc.stderr)["error"] == "ConfigError"

    def test_env_var_selects_config(self, workspace, capsys, monkeypatch):
        root, cfg = workspace
        monkeypatch.setenv("ZEROCARD_CONFIG", str(cfg))
        assert main(["ingest"]) == 0
        manifest = json.loads(capsys.readouterr().out)
        assert len(manifest) == 3
