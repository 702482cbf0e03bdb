import csv
import json
import subprocess
import sys

import pytest

from bulknoise import __version__
from bulknoise.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, OUTPUT_ENV, main
from bulknoise.config import ConfigError, line_table, load_preset, parse, preset_names


def read_table(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.reader(ln for ln in lines if not ln.startswith("#")))
    return comments, rows


def report_dict(path):
    _, rows = read_table(path)
    return {r[0]: r[1] for r in rows[1:]}


def write_cfg(tmp_path, data, name="c.json"):
    p = tmp_path / name
    p.write_text(data if isinstance(data, str) else json.dumps(data, indent=2))
    return str(p)


# ---------------------------------------------------------------- config layer


def test_presets_ship_and_validate():
    assert preset_names() == ["equilibrium-smoke", "gap-scaling", "paper-1-8"]
    for name in preset_names():
        assert load_preset(name)["command"] in ("simulate", "covariance", "compare")
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("nope")


def test_line_table():
    text = '{\n  "a": 1,\n  "b": {\n    "c": [1,\n 2]\n  }\n}'
    table = line_table(text)
    assert table[("a",)] == 2 and table[("b", "c")] == 4 and table[("b", "c", 1)] == 5


def test_parse_errors_carry_lines():
    with pytest.raises(ConfigError, match="empty"):
        parse("  \n", "x.json")
    with pytest.raises(ConfigError) as info:
        parse('{\n "command": "simulate",\n "chain": {"n_sites": 4,}\n}', "x.json")
    assert info.value.line == 3 and str(info.value).startswith("x.json:3:")
    text = '{\n "command": "simulate",\n "chain": {\n   "n_sites": 4,\n   "pinnig": 1\n }\n}'
    with pytest.raises(ConfigError) as info:
        parse(text, "y.json")
    assert info.value.line == 5 and "pinnig" in str(info.value)
    with pytest.raises(ConfigError) as info:
        parse('{"command": "simulate",\n"chain": {"n_sites": "four"}}')
    assert info.value.line == 2


# ---------------------------------------------------------------- exit codes


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == EXIT_CONFIG


def test_presets_command(capsys):
    assert main(["presets"]) == EXIT_OK
    assert "paper-1-8" in capsys.readouterr().out


def test_empty_config_exit_2(tmp_path, capsys):
    assert main(["run", "--config", write_cfg(tmp_path, "")]) == EXIT_CONFIG
    assert "empty" in capsys.readouterr().err


def test_schema_violation_reports_line(tmp_path, capsys):
    cfg = '{\n  "command": "simulate",\n  "chain": {\n    "n_sites": 1\n  }\n}'
    path = write_cfg(tmp_path, cfg, "b.json")
    assert main(["run", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"{path}:4:" in err and "n_sites" in err


def test_missing_file_and_mismatched_command(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG
    path = write_cfg(tmp_path, {"command": "hydro"})
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_numeric_failure_exit_3(tmp_path, capsys):
    cfg = {"command": "flucthydro", "flucthydro": {"mesh": 32, "dt": 0.01, "t_final": 1.0}}
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_NUMERIC
    assert "try dt" in capsys.readouterr().err
    cfg = {"command": "simulate", "chain": {"n_sites": 6, "flip_rate": 0.0, "bath_coupling": 0.0},
           "sim": {"dt": 3.0, "allow_large_dt": True, "t_burn": 0, "t_sample": 3000,
                   "init": "gibbs"}}
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_NUMERIC


# ---------------------------------------------------------------- commands


def test_compare_reference_preset(tmp_path):
    assert main(["compare", "--preset", "paper-1-8", "--out", str(tmp_path)]) == EXIT_OK
    rep = report_dict(tmp_path / "paper-1-8_report.csv")
    assert abs(float(rep["lte"]) - 1.2016) < 5e-3
    assert round(float(rep["lte"]), 2) == 1.20
    assert float(rep["s_inf"]) == pytest.approx(1.4033, abs=5e-5)
    assert float(rep["s_inf_field_route"]) == pytest.approx(float(rep["s_inf"]), abs=1e-10)


def test_covariance_equilibrium_flags(tmp_path):
    cfg = {"command": "covariance", "chain": {"n_sites": 8, "temp_left": 2.0, "temp_right": 2.0,
                                              "flip_rate": 0.5}}
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    rep = report_dict(tmp_path / "covariance_report.csv")
    assert rep["equilibrium"] == "true" and rep["zero_current"] == "true"
    comments, rows = read_table(tmp_path / "covariance_matrix.csv")
    assert rows[0][:3] == ["coord", "q1", "q2"] and len(rows) == 17


def test_gap_scaling_preset(tmp_path):
    assert main(["covariance", "--preset", "gap-scaling", "--out", str(tmp_path)]) == EXIT_OK
    gaps = report_dict(tmp_path / "gap-scaling_gaps.csv")
    assert -2.3 <= float(gaps["fit_exponent"]) <= -1.7


def test_selfconsistent_and_hydro(tmp_path):
    cfg = {"command": "selfconsistent",
           "chain": {"n_sites": 10, "model": "SelfConsistent", "temp_left": 1, "temp_right": 8}}
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    assert float(report_dict(tmp_path / "selfconsistent_summary.csv")["residual"]) < 1e-10
    cfg = {"command": "hydro", "hydro": {"mesh": 16, "t_final": 0.1, "dt_macro": 0.01}}
    assert main(["run", "--config", write_cfg(tmp_path, cfg, "h.json"), "--out",
                 str(tmp_path)]) == EXIT_OK
    _, rows = read_table(tmp_path / "hydro_snapshots.csv")
    assert rows[0] == ["t", "x", "u", "eps"]


def test_flucthydro_closed_form_only(tmp_path):
    cfg = {"command": "flucthydro", "flucthydro": {"simulate": False}}
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    _, rows = read_table(tmp_path / "flucthydro_variances.csv")
    values = {(r[0], r[1]): float(r[2]) for r in rows[1:]}
    assert values[("s_inf", "")] == pytest.approx(1.40329, abs=1e-5)
    assert values[("y_variance_exact", "1")] == pytest.approx(73 / 3 + 49 / 12, abs=1e-9)


def test_output_header_and_determinism(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    args = ["simulate", "--preset", "equilibrium-smoke", "--seed", "11"]
    assert main(args) == EXIT_OK
    first = (tmp_path / "env" / "equilibrium-smoke_summary.csv").read_bytes()
    profile = (tmp_path / "env" / "equilibrium-smoke_profile.csv").read_bytes()
    assert main(args) == EXIT_OK
    assert (tmp_path / "env" / "equilibrium-smoke_summary.csv").read_bytes() == first
    assert (tmp_path / "env" / "equilibrium-smoke_profile.csv").read_bytes() == profile
    comments, _ = read_table(tmp_path / "env" / "equilibrium-smoke_profile.csv")
    assert comments[0] == f"# bulknoise {__version__}"
    resolved = json.loads(comments[1][len("# config: "):])
    assert resolved["sim"]["seed"] == 11
    assert resolved["chain"]["n_sites"] == 8 and "dt" in resolved["sim"]
    assert main(["simulate", "--preset", "equilibrium-smoke", "--seed", "12"]) == EXIT_OK
    assert (tmp_path / "env" / "equilibrium-smoke_summary.csv").read_bytes() != first


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "bulknoise.cli", "presets"], capture_output=True,
                         text=True, check=True)
    assert "gap-scaling" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "bulknoise.cli"], capture_output=True)
    assert bad.returncode == 2
