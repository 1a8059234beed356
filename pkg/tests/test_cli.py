from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from warerover.cli import SchemaMismatchError, emit_report, main


def run_cli(*args, env=None):
    return subprocess.run(
        [sys.executable, "-m", "warerover.cli", *args],
        capture_output=True, text=True, timeout=240, env=env,
    )


FAST = ["--orders", "3", "--horizon", "400", "--deterministic-ct"]


class TestDispatch:
    def test_help_exits_zero(self):
        proc = run_cli("--help")
        assert proc.returncode == 0
        assert "run" in proc.stdout and "experiment" in proc.stdout

    def test_bad_planner_names_value(self):
        proc = run_cli("run", "--planner", "bogus")
        assert proc.returncode == 2
        assert "bogus" in proc.stderr

    def test_bad_scheduler_flag(self):
        proc = run_cli("run", "--scheduler", "xyz")
        assert proc.returncode == 2
        assert "xyz" in proc.stderr

    def test_unknown_flag_rejected(self):
        proc = run_cli("run", "--warp-speed", "9")
        assert proc.returncode == 2

    def test_single_run_smoke(self, tmp_path):
        out = tmp_path / "row.csv"
        events = tmp_path / "events.log"
        orders = tmp_path / "orders.csv"
        proc = run_cli("run", "--scenario", "homogeneous", "--scheduler", "ta",
                       "--planner", "cbs", "--pattern", "os", "--seed", "7", *FAST,
                       "--out", str(out), "--out-events", str(events),
                       "--out-orders", str(orders))
        assert proc.returncode == 0, proc.stderr
        assert "env,scheduler,planner" in proc.stdout
        assert out.read_text().startswith("env,")
        assert orders.read_text().startswith("order_id,")
        assert events.read_text().count("\tsummary\t") == 1

    def test_run_exit_one_on_missing_layout(self):
        proc = run_cli("run", "--layout", "/nonexistent/layout.json")
        assert proc.returncode == 1
        assert "error" in proc.stderr

    def test_scripted_failures_require_script(self):
        proc = run_cli("run", "--failures", "scripted")
        assert proc.returncode == 2

    def test_scripted_failures(self, tmp_path):
        script = tmp_path / "failures.csv"
        script.write_text("step,agv_id\n2,0\n")
        events = tmp_path / "events.log"
        proc = run_cli("run", "--scenario", "homogeneous", *FAST,
                       "--failures", "scripted", "--failure-script", str(script),
                       "--down-steps", "10", "--out-events", str(events))
        assert proc.returncode == 0, proc.stderr
        lines = [l for l in events.read_text().splitlines() if "\tfailure\t" in l]
        assert len(lines) == 1
        payload = json.loads(lines[0].split("\t", 2)[2])
        assert payload["agv"] == 0 and payload["at"] == 2 and payload["recovery_at"] == 12


class TestLayoutCommands:
    def test_gen_then_validate(self, tmp_path):
        out = tmp_path / "layout.json"
        proc = run_cli("gen-layout", "--width", "16", "--height", "12", "--shelves",
                       "10", "--stations", "3", "--agvs", "2", "--seed", "4",
                       "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        val = run_cli("validate-layout", "--layout", str(out))
        assert val.returncode == 0
        assert "layout OK" in val.stdout

    def test_validate_rejects_bad_layout(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({
            "width": 5, "height": 5,
            "shelves": [{"id": "S0", "x": 2, "y": 2, "size": 1, "contents": []}],
            "obstacles": [{"x": 2, "y": 2}],
        }))
        proc = run_cli("validate-layout", "--layout", str(bad))
        assert proc.returncode == 1
        assert "(2, 2)" in proc.stderr

    def test_gen_infeasible_density(self):
        proc = run_cli("gen-layout", "--width", "3", "--height", "3", "--shelves",
                       "9", "--stations", "1", "--agvs", "1")
        assert proc.returncode == 1
        assert "infeasible" in proc.stderr

    def test_run_from_custom_layout(self, tmp_path):
        out = tmp_path / "layout.json"
        run_cli("gen-layout", "--width", "16", "--height", "12", "--shelves", "8",
                "--stations", "2", "--agvs", "2", "--seed", "4", "--out", str(out))
        proc = run_cli("run", "--layout", str(out), *FAST)
        assert proc.returncode == 0, proc.stderr
        assert ",custom," not in proc.stdout.splitlines()[0]
        assert "custom" in proc.stdout


class TestExperimentAndReport:
    def test_experiment_with_report(self, tmp_path):
        out = tmp_path / "results.csv"
        proc = run_cli("experiment", "--scenario", "homogeneous", "--repeats", "2",
                       *FAST, "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        assert "Env." in proc.stdout and "TA + A*" in proc.stdout
        text = out.read_text()
        assert text.startswith("env,scheduler,planner,pattern,seed,sr,ct_ms,tp")
        assert len(text.strip().splitlines()) == 3

    def test_report_from_existing_csv(self, tmp_path):
        csv_path = tmp_path / "r.csv"
        csv_path.write_text(
            "env,scheduler,planner,pattern,seed,sr,ct_ms,tp,makespan,failures,collisions\n"
            "Ho,ta,astar,os,0,100.0,1.5,0.34,90,0,0\n"
            "Ho,ta,astar,os,1,100.0,1.7,0.30,95,0,0\n"
            "Ho,rd,cbs,os,0,99.0,2.0,0.22,130,0,0\n"
        )
        proc = run_cli("experiment", "--report-from", str(csv_path))
        assert proc.returncode == 0
        assert "TA + A*" in proc.stdout and "RD + CBS" in proc.stdout
        assert "0.32" in proc.stdout  # mean TP of the two TA rows

    def test_replay_reproduces_metrics(self, tmp_path):
        events = tmp_path / "events.log"
        proc = run_cli("run", "--scenario", "homogeneous", "--seed", "3", *FAST,
                       "--out-events", str(events))
        assert proc.returncode == 0, proc.stderr
        replay = run_cli("replay", "--log", str(events))
        assert replay.returncode == 0, replay.stderr
        assert "replay matches recorded metrics" in replay.stdout


class TestEmitReport:
    def test_empty_csv_header_only(self):
        table = emit_report(
            "env,scheduler,planner,pattern,seed,sr,ct_ms,tp,makespan,failures,collisions\n"
        )
        assert table.splitlines()[0].startswith("Env.")
        assert len(table.splitlines()) == 1

    def test_missing_column_named(self):
        with pytest.raises(SchemaMismatchError, match="tp"):
            emit_report("env,scheduler,planner,pattern,seed,sr,ct_ms,makespan,failures,collisions\nx" )

    def test_empty_document(self):
        with pytest.raises(SchemaMismatchError):
            emit_report("")


def test_main_callable_directly(tmp_path):
    # main() is the console entry point; exercise it in-process too
    assert main(["validate-layout", "--layout", "/nope.json"]) == 1
