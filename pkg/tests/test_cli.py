import csv
import json
import math
from pathlib import Path

import pytest

import config
import main
import metro
import reports

TEST_DATA_DIR = Path(__file__).parent / "data"


def _run(tmp_path, scenario, *extra, out_name="report.json"):
    out = tmp_path / out_name
    code = main.run(["--scenario", str(TEST_DATA_DIR / scenario), "--out", str(out), *extra])
    return code, out


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_triangle_bound_report(tmp_path):
    code, out = _run(tmp_path, "triangle_bound.json")
    assert code == main.EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["bound"] == pytest.approx(1 / 12)
    assert report["holds"] is True
    assert report["k_values"] == [2, 2, 2]


def test_bound_sweep_over_cycle_size(tmp_path):
    code, out = _run(tmp_path, "cycle_bound.json", "--sweep", "M=2:5:1", out_name="sweep.csv")
    assert code == main.EXIT_OK
    rows = _rows(out)
    assert [row["M"] for row in rows] == ["2", "3", "4", "5"]
    assert all(row["holds"] == "true" for row in rows)
    assert all(row["k_max"] == "2" for row in rows)


def test_protocol_report(tmp_path):
    code, out = _run(tmp_path, "cycle3_protocol.json")
    assert code == main.EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["trace"]["success_probability"] == pytest.approx(2 ** -6)
    assert report["trace"]["center_probability"] == pytest.approx(math.cos(0.3) ** 2)
    assert report["fisher_information"] == pytest.approx(9.0, rel=1e-5)
    assert report["privacy"]["passed"] is True
    assert report["queries_per_run"] == 3


def test_sampled_protocol_needs_a_seed(tmp_path):
    code, out = _run(tmp_path, "cycle3_sampled.json")
    assert code == main.EXIT_VALIDATION
    assert not out.exists()


def test_sampled_protocol_is_byte_identical_on_rerun(tmp_path):
    first = tmp_path / "first.json"
    second = tmp_path / "second.json"
    args = ["--scenario", str(TEST_DATA_DIR / "cycle3_sampled.json"), "--seed", "5", "--shots", "500"]
    assert main.run([*args, "--out", str(first)]) == main.EXIT_OK
    assert main.run([*args, "--out", str(second)]) == main.EXIT_OK
    assert first.read_bytes() == second.read_bytes()
    assert json.loads(first.read_text(encoding="utf-8"))["sampled"]["shots"] == 500


def test_fisher_sweep_reports_the_scaling_slope(tmp_path):
    code, out = _run(tmp_path, "cycle_fisher_sweep.json", "--sweep", "M=2:5:1", out_name="fisher.csv")
    assert code == main.EXIT_OK
    rows = _rows(out)
    assert len(rows) == 4
    for row in rows:
        assert float(row["fisher_information"]) == pytest.approx(int(row["M"]) ** 2, rel=1e-5)
    assert float(rows[0]["fisher_slope"]) == pytest.approx(2.0, abs=1e-3)


def test_ising_sweep(tmp_path):
    code, out = _run(tmp_path, "ising_witness.json", "--sweep", "eps=0:1:0.1", "--format", "csv", out_name="ising.csv")
    assert code == main.EXIT_OK
    rows = _rows(out)
    assert len(rows) == 11
    assert float(rows[1]["our_bound"]) == pytest.approx(22.05)
    assert [row["large_eps"] for row in rows] == ["false"] * 8 + ["true"] * 3


def test_lightcone_report(tmp_path):
    code, out = _run(tmp_path, "chain_lightcone.json")
    assert code == main.EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["q"] == 5
    assert report["exact_support"] <= report["q"]
    assert report["shallow_bound"] >= report["shallow_exact_qfi"]
    assert report["embedded_bound"] >= report["embedded_exact_qfi"]


def test_cov_decomposition_report(tmp_path):
    code, out = _run(tmp_path, "product_decompose.json")
    assert code == main.EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["violations"] == []
    assert sorted(report["parts"]) == ["0", "1", "2"]
    assert all(part["psd"] for part in report["parts"].values())


def test_t_decomposition_report(tmp_path):
    code, out = _run(tmp_path, "triangle_t_decompose.json")
    assert code == main.EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["holds"] is True
    assert report["projectors"] == {"0": [0, 1], "1": [1, 2], "2": [0, 2]}


def test_t_decomposition_with_random_sources_and_noise(tmp_path):
    code, out = _run(tmp_path, "sun_t_decompose_noisy.json")
    assert code == main.EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["holds"] is True
    assert report["projectors"] == {"0": [0, 1], "1": [0, 2], "2": [1, 3]}


def test_fisher_at_an_extremum_is_a_validation_error(tmp_path):
    scenario = tmp_path / "flat.json"
    scenario.write_text(
        json.dumps({"kind": "protocol", "payload": {"family": "cycle", "M": 3, "fisher_at": 0.0}}),
        encoding="utf-8",
    )
    out = tmp_path / "out.json"
    assert main.run(["--scenario", str(scenario), "--out", str(out)]) == main.EXIT_VALIDATION
    assert not out.exists()


def test_malformed_scenario_is_rejected(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    out = tmp_path / "out.json"
    assert main.run(["--scenario", str(broken), "--out", str(out)]) == main.EXIT_VALIDATION
    assert not out.exists()


def test_unknown_kind_is_rejected(tmp_path):
    scenario = tmp_path / "odd.json"
    scenario.write_text(json.dumps({"kind": "teleport", "payload": {}}), encoding="utf-8")
    assert main.run(["--scenario", str(scenario), "--out", str(tmp_path / "out.json")]) == main.EXIT_VALIDATION


def test_unsupported_sweep_key(tmp_path):
    code, _ = _run(tmp_path, "triangle_bound.json", "--sweep", "shots=1:3:1")
    assert code == main.EXIT_VALIDATION


def test_oversized_state_exits_with_too_large(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "MAX_MIXED_QUBITS", 2)
    code, out = _run(tmp_path, "triangle_bound.json")
    assert code == main.EXIT_TOO_LARGE
    assert not out.exists()


def test_violation_raises_the_alarm(tmp_path, monkeypatch):
    alerts = []
    failing = metro.BoundCertificate(
        bound=0.1, qfi_trace=5.0, gap_min_eig=-1.0, k_values=[2, 2, 2],
        variances=[0.25, 0.25, 0.25], holds=False, scaling_floor=0.01,
    )
    monkeypatch.setattr(metro, "verify_qfi_bound", lambda *args, **kwargs: failing)
    monkeypatch.setattr(reports, "send_alert", alerts.append)
    code, out = _run(tmp_path, "triangle_bound.json")
    assert code == main.EXIT_VIOLATION
    assert out.exists()
    assert len(alerts) == 1
    assert "triangle_bound.json" in alerts[0]
