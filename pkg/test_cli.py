"""命令行入口：配置解析、优先级、退出码与 CSV 输出测试"""
import math
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app import cli
from app.config import ANDERSON_WIDTH_FACTOR
from app.errors import ConfigError
from app.models import ModelKind
from app.services.verify_service import verify_service
from app.utils.csv_export import LYAPUNOV_COLUMNS, read_csv


def test_parse_config_text():
    text = """
    # 注释行
    model = anderson-real
    L = 20
    lambda = 0.1     # 行尾注释
    steps = 1e6
    energies = 0.5, 1.0; 2
    exponents = 20,19
    burn-in = 500
    """
    values = cli.parse_config_text(text)
    assert values["model"] == "anderson-real"
    assert values["lam"] == "0.1"
    assert values["steps"] == 1000000
    assert values["energies"] == [0.5, 1.0, 2.0]
    assert values["exponents"] == [20, 19]
    assert values["burn_in"] == 500


def test_parse_config_errors_carry_location():
    with pytest.raises(ConfigError) as info:
        cli.parse_config_text("L = 3\nsteps 100\n")
    assert info.value.line == 2
    with pytest.raises(ConfigError) as info:
        cli.parse_config_text("L = 3\nE = 1\nbogus = 1\n")
    assert info.value.line == 3 and info.value.field == "bogus"
    with pytest.raises(ConfigError) as info:
        cli.parse_config_text("seed =\n")
    assert info.value.field == "seed"
    with pytest.raises(ConfigError) as info:
        cli.parse_config_text("steps = many\n")
    assert info.value.field == "steps"


def test_precedence(tmp_path):
    """预设 < 配置文件 < 命令行"""
    path = tmp_path / "run.cfg"
    path.write_text("L = 8\nE = 0.7\n", encoding="utf-8")
    cfg = cli.build_run_config("rpp", {"config": str(path), "preset": "magnetic-rpp", "L": 5})
    assert cfg.L == 5
    assert cfg.E == 0.7
    assert cfg.phi == pytest.approx(2 * math.pi * 0.23)
    assert cfg.steps == 1000
    assert cfg.model is ModelKind.ANDERSON_MAGNETIC


def test_width_convention():
    cfg = cli.build_run_config("lyapunov", {"model": "anderson-real", "W": 1.2, "steps": "1e3"})
    assert cfg.lam == pytest.approx(1.2 / ANDERSON_WIDTH_FACTOR)
    assert cfg.steps == 1000


def test_unknown_preset():
    with pytest.raises(ConfigError) as info:
        cli.build_run_config("lyapunov", {"preset": "nope"})
    assert info.value.field == "preset"


def test_validation_error_becomes_config_error():
    with pytest.raises(ConfigError) as info:
        cli.build_run_config("lyapunov", {"model": "anderson-real", "L": 0})
    assert info.value.field == "L"


def test_burn_in_clamped():
    cfg = cli.build_run_config("lyapunov", {"model": "anderson-real", "steps": 50})
    assert cfg.chain_config().burn_in == 0


def test_formula_command(capsys):
    """L = 1, E = 1 (μ = -1)：γ = λ²/(8·3/4)"""
    code = cli.main(["formula", "--class", "R", "--L", "1", "--E", "1", "--lambda", "0.1", "--quiet"])
    assert code == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "gamma_1 = 1.666667e-03" in out
    assert "class=R" in out


def test_formula_csv(tmp_path):
    path = tmp_path / "formula.csv"
    code = cli.main(["formula", "--model", "anderson-magnetic", "--L", "6", "--E", "0.5", "--phi", "0.4",
                     "--lambda", "0.1", "--quiet", "-o", str(path)])
    assert code == cli.EXIT_OK
    meta, columns, rows = read_csv(path.read_text(encoding="utf-8"))
    assert columns == ["p", "gamma_formula"]
    assert [int(r[0]) for r in rows] == [3, 4, 5, 6]
    assert meta["command"] == "formula"


def test_band_edge_exit_code():
    assert cli.main(["formula", "--class", "R", "--L", "1", "--E", "4", "--quiet"]) == cli.EXIT_NUMERICAL


def test_contract_violation_is_config_exit():
    """磁性 Anderson 模型要求 φ ≠ 0"""
    code = cli.main(["lyapunov", "--model", "anderson-magnetic", "--L", "3", "--E", "0.5", "--steps", "10",
                     "--quiet"])
    assert code == cli.EXIT_CONFIG


def test_bad_config_file_exit_code(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("model = anderson-real\nL = 2\nbogus = 1\n", encoding="utf-8")
    assert cli.main(["lyapunov", "--config", str(path), "--quiet"]) == cli.EXIT_CONFIG
    assert cli.main(["lyapunov", "--config", str(tmp_path / "missing.cfg"), "--quiet"]) == cli.EXIT_CONFIG


def test_invalid_choice_exits():
    with pytest.raises(SystemExit) as info:
        cli.main(["formula", "--class", "X"])
    assert info.value.code == 2


def test_lyapunov_writes_csv(tmp_path):
    path = tmp_path / "out" / "lyapunov.csv"
    code = cli.main(["lyapunov", "--model", "anderson-real", "--L", "2", "--E", "0.5", "--lambda", "0.2",
                     "--steps", "200", "--seed", "3", "--threads", "1", "--quiet", "-o", str(path)])
    assert code == cli.EXIT_OK
    meta, columns, rows = read_csv(path.read_text(encoding="utf-8"))
    assert columns == LYAPUNOV_COLUMNS
    assert len(rows) == 2
    assert meta["seed"] == 3
    assert meta["config"]["model"] == "anderson-real"
    assert {r[4] for r in rows} <= {"hyperbolic", "elliptic"}


def test_scan_requires_energies():
    code = cli.main(["scan", "--model", "anderson-real", "--L", "2", "--steps", "10", "--quiet"])
    assert code == cli.EXIT_CONFIG


def test_scan_skips_band_edge(tmp_path):
    """E = 4 时 L = 1 的唯一通道处于带边，该能量点被跳过"""
    path = tmp_path / "scan.csv"
    code = cli.main(["scan", "--model", "anderson-real", "--L", "1", "--lambda", "0.1", "--steps", "300",
                     "--burn-in", "0", "--energies", "1.0,4.0", "--exponents", "1", "--threads", "1",
                     "--quiet", "-o", str(path)])
    assert code == cli.EXIT_OK
    meta, _, rows = read_csv(path.read_text(encoding="utf-8"))
    assert meta["skipped"] == [4.0]
    assert len(rows) == 1
    assert float(rows[0][4]) == pytest.approx(0.01 / 6, rel=1e-6)


def test_verify_fault_injection(monkeypatch):
    """损坏辛形式后自检必须失败"""
    monkeypatch.setattr(verify_service, "QUICK", [])
    assert cli.main(["verify", "quick", "--inject-fault", "--quiet"]) == cli.EXIT_VERIFY


def test_verify_algebraic_checks_pass():
    for check in (verify_service.check_constants, verify_service.check_normal_forms):
        rows = list(check())
        assert rows and all(r.passed for r in rows)
