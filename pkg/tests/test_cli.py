import csv
import io
import subprocess
import sys

import pytest

from fraclap.benchmark import StudyRow
from fraclap.cli import CSV_COLUMNS, ConfigError, emit_table, parse_config, run_main


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run_main(argv, out, err)
    return code, out.getvalue(), err.getvalue()


def test_parse_example():
    cfg, audit = parse_config(
        "--alpha 0.8 --kappa uniform --N 64,128 --scheme original --solver pf-bicgstab".split()
    )
    assert cfg.alphas == (0.8,) and cfg.kappas == ("uniform",) and cfg.N_list == (64, 128)
    assert cfg.eps_soe == 1e-8 and cfg.tol == 1e-8 and cfg.band_l == 2 and not audit


def test_parse_power_of_two_and_tokens():
    cfg, _ = parse_config(["--alpha", "0.4", "--kappa", "k(2-a)/s", "--N", "2^6,2^7"])
    assert cfg.N_list == (64, 128)
    from fraclap.benchmark import resolve_kappa

    assert resolve_kappa(cfg.kappas[0], 0.4) == pytest.approx(8.0)


@pytest.mark.parametrize("argv", [
    "--alpha 0.5 --N 63", "--alpha 2.5", "--alpha x", "--alpha 0.5 --bogus 1",
    "--alpha 0.5 --kappa 0.5", "--alpha 1.7 --kappa k(2-a)/s", "--N 64",
    "--alpha 0.5 --a 2 --b 1",
])
def test_invalid_input_exit_code(argv):
    code, out, err = run(argv.split())
    assert code == 2 and out == "" and "invalid" in err
    with pytest.raises(ConfigError):
        parse_config(argv.split())


def test_valid_run_writes_csv():
    code, out, err = run("--alpha 0.8 --N 16,32".split())
    assert code == 0, err
    lines = out.strip().splitlines()
    assert lines[0] == CSV_COLUMNS and len(lines) == 3
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows[0]["order"] == "" and rows[1]["order"] != ""
    assert rows[1]["solver"] == "pf-bicgstab" and rows[1]["scheme"] == "original"


def test_csv_round_trip_is_exact():
    row = StudyRow(0.1 + 0.2, 8.0 / 3.0, 64, "original", "ge", 1 / 3, 0.41359999999999997, None, 1e-3 / 7)
    (parsed,) = csv.DictReader(io.StringIO(emit_table([row])))
    assert float(parsed["alpha"]) == row.alpha
    assert float(parsed["kappa"]) == row.kappa
    assert float(parsed["error_inf"]) == row.error_inf
    assert float(parsed["order"]) == row.order
    assert float(parsed["wall_time_s"]) == row.wall_time
    assert parsed["iterations"] == ""


def test_emit_table_errors():
    with pytest.raises(ValueError):
        emit_table([])
    with pytest.raises(ValueError):
        emit_table([StudyRow(0.5, 1.0, 8, "original", "ge", 0.1)], "xml")


def test_deterministic_output_except_timing():
    argv = "--alpha 0.6,1.2 --kappa uniform,2 --N 16,32 --scheme modified".split()
    strip = lambda text: [line.rsplit(",", 1)[0] for line in text.splitlines()]
    _, first, _ = run(argv)
    _, second, _ = run(argv)
    assert strip(first) == strip(second)


def test_markdown_layout():
    code, out, _ = run("--alpha 0.8 --N 32,64 --output markdown".split())
    assert code == 0
    assert "| kappa | N | error_inf | Cov. | Iter. | time (s) |" in out
    assert "alpha = 0.8, scheme = original, solver = pf-bicgstab" in out


def test_audit_dispatch():
    code, out, _ = run("--alpha 0.8 --N 64 --audit".split())
    assert code == 0
    assert "passed=True" in out and "eps_threshold=" in out
    code, out, _ = run("--alpha 1.5 --N 32 --audit".split())
    assert code == 0 and "unsupported-theory" in out


def test_non_convergence_exit_code():
    code, out, err = run("--alpha 0.8 --N 64 --solver f-bicgstab --max-iter 1".split())
    assert code == 3 and "no convergence" in err
    assert out.startswith(CSV_COLUMNS)


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "fraclap", "--alpha", "0.5", "--N", "8"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines()[0] == CSV_COLUMNS


def test_soe_failure_exit_code(monkeypatch):
    import fraclap.benchmark as bench
    from fraclap.soe import SoeBuildError

    def fail(*args):
        raise SoeBuildError("budget exhausted")

    monkeypatch.setattr(bench, "build_soe", fail)
    code, _, err = run("--alpha 0.5 --N 16".split())
    assert code == 4 and "SOE" in err
