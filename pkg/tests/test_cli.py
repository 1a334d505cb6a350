import json
from pathlib import Path

import numpy as np
import pytest

from availkit.cli import main
from availkit.faultsim import FaultKind, simulate
from availkit.scenarios import three_tier_with_fault


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestEntropyCommand:
    def test_constant_series_all_zero(self, tmp_path, capsys):
        path = tmp_path / "series.csv"
        path.write_text("".join("5.0\n" for _ in range(600)))
        code, out, _ = run_cli(
            capsys, "entropy", "--input", str(path), "--m", "2",
            "--r-fraction", "0.15", "--max-scale", "10", "--format", "json",
        )
        assert code == 0
        doc = json.loads(out)
        assert [e["value"] for e in doc["curve"]] == [0.0] * 10
        assert doc["score"] == 0.0

    def test_text_format(self, tmp_path, capsys):
        path = tmp_path / "series.csv"
        rng = np.random.default_rng(0)
        path.write_text("".join(f"{v}\n" for v in rng.normal(size=300)))
        code, out, _ = run_cli(capsys, "entropy", "--input", str(path))
        assert code == 0
        assert "scale  1:" in out and "score:" in out

    def test_ts_value_csv(self, tmp_path, capsys):
        path = tmp_path / "series.csv"
        path.write_text("".join(f"{i * 1000},{5.0}\n" for i in range(200)))
        code, out, _ = run_cli(capsys, "entropy", "--input", str(path), "--format", "json")
        assert code == 0

    def test_missing_file_is_domain_error(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "entropy", "--input", str(tmp_path / "nope.csv"))
        assert code == 1


class TestPcCommand:
    def test_chain_graph(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        x = rng.normal(size=3000)
        y = 0.8 * x + rng.normal(size=3000)
        z = 0.8 * y + rng.normal(size=3000)
        path = tmp_path / "matrix.csv"
        rows = ["x,y,z"] + [f"{a},{b},{c}" for a, b, c in zip(x, y, z)]
        path.write_text("\n".join(rows) + "\n")
        code, out, _ = run_cli(
            capsys, "pc", "--input", str(path), "--alpha", "0.01", "--max-cond", "3",
            "--format", "json",
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["metrics"] == ["x", "y", "z"]
        assert sorted(doc["undirected"]) == [[0, 1], [1, 2]]
        assert doc["directed"] == []

    def test_cli_output_value_identical_to_library_call(self, tmp_path, capsys):
        from availkit.causal import PCConfig, learn_metric_graph
        from availkit.model import MetricMatrix

        rng = np.random.default_rng(9)
        x = rng.normal(size=2000)
        y = rng.normal(size=2000)
        z = 0.9 * x + 0.9 * y + rng.normal(size=2000)
        data = np.column_stack([x, y, z])
        path = tmp_path / "matrix.csv"
        path.write_text("a,b,c\n" + "\n".join(",".join(map(str, row)) for row in data) + "\n")
        code, out, _ = run_cli(capsys, "pc", "--input", str(path), "--format", "json")
        assert code == 0
        cli_doc = json.loads(out)

        direct = learn_metric_graph(
            MetricMatrix(1000, 0, ["a", "b", "c"], data), PCConfig()
        )
        want = direct.to_dict()
        want["dropped"] = list(direct.dropped)
        assert cli_doc == want


class TestSimulateAndDiagnose:
    def test_random_simulation_writes_files(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code, out, _ = run_cli(
            capsys, "simulate", "--random", "--services", "3", "--metrics", "4",
            "--degree", "1.5", "--seed", "7", "--ticks", "60", "--out", str(out_dir),
            "--format", "json",
        )
        assert code == 0
        doc = json.loads(out)
        assert Path(doc["metrics"]).exists()
        assert Path(doc["topology"]).exists()
        assert doc["n_samples"] == 60 * 3 * 4

    def test_same_seed_byte_identical(self, tmp_path, capsys):
        args = ["simulate", "--random", "--services", "2", "--metrics", "3",
                "--degree", "1.0", "--seed", "5", "--ticks", "50"]
        code1, _, _ = run_cli(capsys, *args, "--out", str(tmp_path / "a"))
        code2, _, _ = run_cli(capsys, *args, "--out", str(tmp_path / "b"))
        assert code1 == code2 == 0
        for name in ("metrics.ndjson", "events.ndjson", "labels.ndjson", "topology.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_diagnose_finds_injected_fault(self, tmp_path, capsys):
        spec = three_tier_with_fault(FaultKind.cpu_hog, seed=0)
        sim = simulate(spec, tmp_path)
        code, out, _ = run_cli(
            capsys, "diagnose",
            "--topology", str(sim.topology_path),
            "--metrics", str(tmp_path),
            "--entry", "10.0.0.1:web",
            "--baseline", "1200", "--window", "600",
            "--pc-stride", "5", "--z-threshold", "5", "--theta", "10",
            "--format", "json",
        )
        assert code == 0
        doc = json.loads(out)
        top = doc["ranked_causes"][0]
        assert (top["ip"], top["service"]) == ("10.0.0.3", "db")
        pairs = [(c["service"], c["metric"]) for c in doc["ranked_causes"][:3]]
        assert ("db", "cpu_util") in pairs


class TestAvailabilityAndForecast:
    def test_availability_report(self, tmp_path, capsys):
        path = tmp_path / "events.ndjson"
        lines = [
            '{"ts_ms": 0, "ip": "10.0.0.3", "service": "db", "state": "up"}',
            '{"ts_ms": 1999, "ip": "10.0.0.3", "service": "db", "state": "down"}',
            '{"ts_ms": 2000, "ip": "10.0.0.3", "service": "db", "state": "up"}',
        ]
        path.write_text("\n".join(lines) + "\n")
        code, out, _ = run_cli(
            capsys, "availability", "--events", str(path), "--format", "json"
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["reports"][0]["availability"] == pytest.approx(0.9995)

    def test_forecast_crossing(self, tmp_path, capsys):
        path = tmp_path / "history.csv"
        path.write_text("0,0.1\n1,0.2\n2,0.3\n")
        code, out, _ = run_cli(
            capsys, "forecast", "--input", str(path), "--theta", "0.6",
            "--fit-window", "3", "--format", "json",
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["kind"] == "crossing"
        assert doc["crossing_ts_ms"] == pytest.approx(5.0)


class TestMethodsAndAnalyze:
    def test_methods_listing(self, capsys):
        code, out, _ = run_cli(capsys, "methods", "--format", "json")
        assert code == 0
        doc = json.loads(out)
        assert len(doc["methods"]) == 7

    def test_analyze_unknown_method(self, tmp_path, capsys):
        path = tmp_path / "series.csv"
        path.write_text("1.0\n2.0\n")
        code, _, err = run_cli(capsys, "analyze", "--method", "nope", "--input", str(path))
        assert code == 1
        assert "unknown method" in err

    def test_analyze_runs_bus_method(self, tmp_path, capsys):
        path = tmp_path / "series.csv"
        path.write_text("".join("3.0\n" for _ in range(600)))
        code, out, _ = run_cli(
            capsys, "analyze", "--method", "mse", "--input", str(path), "--format", "json"
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["payload"]["score"] == 0.0

    def test_analyze_param_override(self, tmp_path, capsys):
        path = tmp_path / "series.csv"
        path.write_text("".join("3.0\n" for _ in range(600)))
        code, out, _ = run_cli(
            capsys, "analyze", "--method", "mse", "--input", str(path),
            "--param", "max_scale=5", "--format", "json",
        )
        assert code == 0
        doc = json.loads(out)
        assert len(doc["payload"]["curve"]) == 5


class TestUsageErrors:
    def test_no_subcommand_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["entropy", "--nope"])
        assert exc.value.code == 2

    def test_simulate_without_mode_is_domain_error(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "simulate", "--out", str(tmp_path))
        assert code == 1
        assert "either --spec or --random" in err
