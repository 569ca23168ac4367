from pathlib import Path

import pytest
from typer.testing import CliRunner

from src.cli import app
from src.datamodel import GrowthReport
from src.fields import read_field_csv

CONFIGS = Path(__file__).parent.parent / "configs"

runner = CliRunner()


def _value(output: str, label: str) -> float:
    line = next(l for l in output.splitlines() if l.startswith(f"{label} = "))
    return float(line.split("=", 1)[1].split(",")[0])


def test_cell_prints_fast_flux():
    result = runner.invoke(app, ["cell", str(CONFIGS / "lin1d.toml"), "--xi", "1", "--y", "0.25"])
    assert result.exit_code == 0, result.output
    assert _value(result.output, "h") == pytest.approx(5.19615, abs=1e-4)


def test_cell_rejects_wrong_xi_length():
    result = runner.invoke(app, ["cell", str(CONFIGS / "lin1d.toml"), "--xi", "1,2"])
    assert result.exit_code == 2


def test_validate_passes_for_constant_coefficient():
    result = runner.invoke(app, ["--seed", "3", "validate", str(CONFIGS / "const1d.toml"), "--samples", "1000"])
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    # Phi = t^2/2 of the coefficient is Delta_2 and Delta'
    assert "delta2 = True" in lines and "delta_prime = True" in lines
    header = lines.index(GrowthReport.CSV_HEADER)
    assert lines[header + 1].startswith("1,")
    assert _value(result.output, "simonenko_lo") == pytest.approx(2.0, abs=1e-8)


def test_validate_reports_configured_nfunction(tmp_path):
    config = tmp_path / "exp.toml"
    config.write_text((CONFIGS / "const1d.toml").read_text() + '\n[nfunction]\nkind = "exp_minus_one"\n')
    result = runner.invoke(app, ["validate", str(config), "--samples", "1000"])
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert "delta2 = False" in lines
    row = lines[lines.index(GrowthReport.CSV_HEADER) + 1]
    assert row.split(",")[0] == "0"


def test_missing_config_exits_with_2(tmp_path):
    result = runner.invoke(app, ["validate", str(tmp_path / "missing.toml")])
    assert result.exit_code == 2


def test_empty_eps_list_exits_with_2():
    result = runner.invoke(app, ["converge", str(CONFIGS / "lin1d.toml"), "--eps-list", ""])
    assert result.exit_code == 2


def test_macro_writes_solution(tmp_path):
    result = runner.invoke(app, ["--out", str(tmp_path), "macro", str(CONFIGS / "const1d.toml")])
    assert result.exit_code == 0, result.output
    u0 = read_field_csv(tmp_path / "u0.csv")
    x = u0.mesh.points()[:, 0]
    # -2 u'' = 1 with zero boundary values
    assert u0.flat == pytest.approx(x * (1 - x) / 4.0, abs=1e-4)
    assert (tmp_path / "macro.txt").exists()


def test_sigma_reports_gaps():
    result = runner.invoke(app, ["sigma", str(CONFIGS / "lin1d.toml"), "--eps", "0.25,0.125", "--n", "1024"])
    assert result.exit_code == 0, result.output
    assert len(result.output.strip().splitlines()) == 3
