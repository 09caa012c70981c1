import csv
import json

import pytest

from nfde_lab.cli import main

S1_SYSTEM = {
    "kind": "neutral_diag",
    "m": 1,
    "c": [{"constant": 0.3, "terms": [{"k": [1], "sin": 0.2}]}],
    "alpha": [1.0],
    "rho": [[1.0]],
    "gains": [[1.0]],
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_result(tmp_path):
    with open(tmp_path / "result.csv", newline="") as fh:
        return list(csv.reader(fh))


def test_check_g5_passes(tmp_path, capsys):
    cfg = {
        "schema": 1,
        "system": S1_SYSTEM,
        "check": {"conditions": ["G5"], "a": [-2.0]},
    }
    code = main(["check", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)])
    assert code == 0
    summary = (tmp_path / "summary.txt").read_text()
    assert "overall=PASS" in summary
    margin = [ln for ln in summary.splitlines() if "G5 comp 0" in ln][0]
    assert float(margin.split("margin ")[1].split(" ")[0]) >= 0.5


def test_check_failing_condition_exit_one(tmp_path):
    cfg = {
        "system": {**S1_SYSTEM, "gains": [[2.5]]},
        "check": {"conditions": ["G8"], "a": [-1.0]},
    }
    code = main(["check", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)])
    assert code == 1


def test_unstable_coefficient_exit_three(tmp_path):
    cfg = {
        "system": {**S1_SYSTEM, "c": [1.2]},
        "check": {"conditions": ["G5"], "a": [-2.0]},
    }
    code = main(["check", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)])
    assert code == 3


def test_malformed_config_exit_two(tmp_path):
    bad = {k: v for k, v in S1_SYSTEM.items() if k != "alpha"}
    cfg = {"system": bad, "check": {"conditions": ["G5"], "a": [-2.0]}}
    code = main(["check", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)])
    assert code == 2


def test_unparsable_json_exit_two(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["check", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_simulate_equilibrium_constant_column(tmp_path):
    cfg = {
        "system": {**S1_SYSTEM, "c": [0.3]},
        "sim": {"h": 0.02, "t_end": 2.0, "log_stride": 10},
        "z_init": {"kind": "constant", "value": [2.0]},
    }
    code = main(
        ["simulate", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]
    )
    assert code == 0
    rows = read_result(tmp_path)
    assert rows[0] == ["t", "z1", "zhat1", "M"]
    zvals = [float(r[1]) for r in rows[1:]]
    assert max(abs(v - 2.0) for v in zvals) < 1e-7
    assert (tmp_path / "config.echo.json").exists()


def test_simulate_deterministic_bytes(tmp_path):
    cfg = {
        "system": S1_SYSTEM,
        "sim": {"h": 0.02, "t_end": 2.0, "log_stride": 5},
        "z_init": {"kind": "constant", "value": [2.0]},
    }
    path = write_cfg(tmp_path, cfg)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["simulate", "--config", path, "--out", str(out1)]) == 0
    assert main(["simulate", "--config", path, "--out", str(out2)]) == 0
    assert (out1 / "result.csv").read_bytes() == (out2 / "result.csv").read_bytes()


def test_mass_audit_threshold(tmp_path):
    cfg = {
        "system": S1_SYSTEM,
        "sim": {"h": 0.02, "t_end": 5.0, "log_stride": 10},
        "z_init": {"kind": "constant", "value": [2.0]},
        "thresholds": {"mass_residual": 5e-4},
    }
    code = main(
        ["mass-audit", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]
    )
    assert code == 0
    rows = read_result(tmp_path)
    assert rows[0] == ["t", "M", "residual"]
    tight = {**cfg, "thresholds": {"mass_residual": 1e-12}}
    code = main(
        ["mass-audit", "--config", write_cfg(tmp_path, tight, "t.json"), "--out", str(tmp_path)]
    )
    assert code == 4


def test_pair_ordered_offset_and_unordered_exit(tmp_path):
    cfg = {
        "system": S1_SYSTEM,
        "cone": {"a_diag": [-2.0], "horizon": 1.0},
        "sim": {"h": 0.02, "t_end": 2.0, "log_stride": 10},
        "z_init": {"kind": "constant", "value": [2.0]},
        "z_init_y": {"kind": "ordered_offset", "lam": 0.2},
    }
    code = main(["pair", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)])
    assert code == 0
    rows = read_result(tmp_path)
    margins = [float(r[-2]) for r in rows[1:]]
    assert min(margins) >= -1e-7

    bad = dict(cfg)
    bad["z_init_y"] = {
        "kind": "sinusoid",
        "base": [2.0],
        "amp": [0.5],
        "period": [0.3],
        "phase": [0.0],
    }
    code = main(
        ["pair", "--config", write_cfg(tmp_path, bad, "bad.json"), "--out", str(tmp_path)]
    )
    assert code == 3


def test_invert_task_scalar_geometric(tmp_path):
    cfg = {
        "system": {
            "kind": "d_operator",
            "m": 1,
            "atoms": [{"lag": 1.0, "weight": [[0.5]]}],
        },
        "yhat": {"kind": "constant", "value": [1.0], "step": 0.05, "horizon": 40.0},
    }
    code = main(
        ["invert", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]
    )
    assert code == 0
    rows = read_result(tmp_path)
    assert rows[0][0] == "s"
    vals = [float(r[1]) for r in rows[1:]]
    assert max(abs(v - 2.0) for v in vals) <= 1e-7
    summary = (tmp_path / "summary.txt").read_text()
    assert "lambda=0.5" in summary


def test_covering_task(tmp_path):
    cfg = {
        "system": {**S1_SYSTEM, "c": [0.3]},
        "sim": {"h": 0.02, "t_end": 40.0, "log_stride": 5},
        "z_init": {"kind": "constant", "value": [2.0]},
        "covering": {"return_tols": [0.1, 0.05], "window": 5.0, "t_min": 0.0},
    }
    code = main(
        ["covering", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]
    )
    assert code == 0
    summary = (tmp_path / "summary.txt").read_text()
    assert "diagnostic_only=yes" in summary
    assert "e_max_trend_monotone_decreasing=yes" in summary


def test_compartmental_kind_open_system(tmp_path):
    cfg = {
        "system": {
            "kind": "compartmental",
            "m": 1,
            "transports": [[0.0]],
            "inflows": [1.0],
            "pipes": [[[[0.0, 1.0]]]],
        },
        "sim": {"h": 0.05, "t_end": 2.0, "log_stride": 4},
        "z_init": {"kind": "constant", "value": [0.5]},
    }
    code = main(
        ["mass-audit", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]
    )
    assert code == 0
    rows = read_result(tmp_path)
    # inflow 1 with no outflow: mass grows linearly, residual ~ 0
    t_last, m_last, r_last = (float(v) for v in rows[-1])
    m_first = float(rows[1][1])
    assert m_last - m_first == pytest.approx(t_last, abs=1e-9)
    assert abs(r_last) <= 1e-9


def test_covering_no_returns_exit_three(tmp_path):
    cfg = {
        "system": {**S1_SYSTEM, "c": [0.3]},
        "sim": {"h": 0.02, "t_end": 4.0, "log_stride": 5},
        "z_init": {"kind": "constant", "value": [2.0]},
        "covering": {"return_tols": [1e-6], "window": 1.0},
    }
    code = main(
        ["covering", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]
    )
    assert code == 3
