import csv

import numpy as np
import pytest

from cofrag import cli, diagnostics
from cofrag.config import Config, ConfigError, format_config, load_config, parse_config

CANONICAL = """
# canonical scenario
coag = power_law_sum
frag = power_law
nu = -1.2
m0 = 0.3
ic = exponential
"""

# a small, fast scenario for exercising the command plumbing
QUICK = CANONICAL + """
x_min = 1e-3
j = 100
cells_per_decade = 8
t_end = 0.5
cadence = 0.125
checks = w_moment, frag_flux, small_moment, high_moment
"""


def write(tmp_path, text, name="scenario.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_minimal_config_parses():
    c = parse_config(CANONICAL)
    assert isinstance(c, Config)
    assert c.nu == -1.2 and c.alpha == 0.3 and c.j == 1e3 and c.cells_per_decade == 32
    assert c.checks == ()


def test_round_trip():
    c = parse_config(QUICK + "j_values = 1e2, 1e3, 1e4\nflux_m = 0.65\nforce = true\n")
    assert parse_config(format_config(c)) == c
    assert parse_config(format_config(parse_config(CANONICAL))) == parse_config(CANONICAL)


def test_constraint_errors_name_the_range():
    with pytest.raises(ConfigError) as exc:
        parse_config(CANONICAL.replace("nu = -1.2", "nu = -2.5"))
    assert any("(-2, -1]" in e for e in exc.value.errors)
    with pytest.raises(ConfigError) as exc:
        parse_config(CANONICAL.replace("m0 = 0.3", "m0 = 0.1"))
    assert any(e.startswith("m0") for e in exc.value.errors)


def test_all_errors_are_collected():
    text = "coag = bogus\nnu = x\nm0 = 2\nfoo = 1\ncells_per_decade = 3.5\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    errs = exc.value.errors
    joined = "\n".join(errs)
    for key in ("coag", "nu", "m0", "foo", "cells_per_decade", "frag", "ic"):
        assert key in joined, key
    assert len(errs) >= 7


def test_malformed_lines_and_duplicates():
    with pytest.raises(ConfigError):
        parse_config(CANONICAL + "just some words\n")
    with pytest.raises(ConfigError):
        parse_config(CANONICAL + "nu = -1.3\n")


def test_dry_run_writes_nothing(tmp_path, capsys):
    cfg = write(tmp_path, QUICK)
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg), "--dry-run", "--out", str(out)]) == 0
    assert not out.exists()
    printed = capsys.readouterr().out
    assert "nu = -1.2" in printed and "growth" in printed


def test_run_writes_artifacts(tmp_path):
    cfg = write(tmp_path, QUICK)
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    for name in ("moments.csv", "report.txt", "report.csv"):
        assert (out / name).exists()
    text = (out / "moments.csv").read_text()
    assert text.startswith("# coag = power_law_sum")
    rows = read_csv(out / "moments.csv")
    assert list(rows[0]) == ["t", "M_0.3", "M_1", "M_2", "M_2.5", "W_functional", "P_0.3", "P_0.65",
                             "subgrid_fraction"]
    m1 = np.array([float(r["M_1"]) for r in rows])
    assert np.max(np.abs(m1 - m1[0])) / m1[0] <= 1e-10
    report = read_csv(out / "report.csv")
    assert [r["name"] for r in report] == ["w_moment", "frag_flux", "small_moment", "high_moment"]
    assert "all checks passed" in (out / "report.txt").read_text()


def test_outputs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, QUICK.replace("high_moment", "high_moment, stability"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(cfg), "--out", str(a)]) == 0
    assert cli.main(["run", str(cfg), "--out", str(b)]) == 0
    for name in ("moments.csv", "report.txt", "report.csv", "distance.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_corrupted_envelope_gives_nonzero_exit(tmp_path, monkeypatch):
    cfg = write(tmp_path, QUICK)
    real = diagnostics.w_envelope
    monkeypatch.setattr(diagnostics, "w_envelope", lambda *a, **k: 0.5 * real(*a, **k))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "out")]) == cli.EXIT_CHECK
    assert "CHECK FAILURE" in (tmp_path / "out" / "report.txt").read_text()


def test_hypothesis_gate_and_force(tmp_path):
    cfg = write(tmp_path, QUICK.replace("coag = power_law_sum", "coag = constant").replace(
        "checks = w_moment, frag_flux, small_moment, high_moment", "checks = w_moment"))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "a")]) == cli.EXIT_HYPOTHESIS
    assert cli.main(["run", str(cfg), "--force", "--out", str(tmp_path / "b")]) == 0


def test_bad_config_and_missing_file(tmp_path, capsys):
    assert cli.main(["run", str(write(tmp_path, "nu = -3\n"))]) == cli.EXIT_USAGE
    assert "nu" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "absent.cfg")]) == cli.EXIT_USAGE


def test_study_needs_three_values(tmp_path, capsys):
    cfg = write(tmp_path, QUICK + "j_values = 1e3\n")
    assert cli.main(["study", str(cfg), "--out", str(tmp_path / "s")]) == cli.EXIT_USAGE
    assert "at least 3" in capsys.readouterr().err


def test_study_summary(tmp_path):
    cfg = write(tmp_path, QUICK + "j_values = 100, 1000, 10000\nresolutions = 4, 8, 16\n")
    assert cli.main(["study", str(cfg), "--out", str(tmp_path / "s")]) == 0
    rows = read_csv(tmp_path / "s" / "summary.csv")
    assert [r["sweep"] for r in rows] == ["j"] * 3 + ["resolution"] * 3 + ["reference"]
    assert rows[3]["cells_per_decade"] == "4" and rows[-1]["cells_per_decade"] == "32"
    for r in rows[1:3]:
        assert float(r["diff_M_1"]) <= 1e-10
    assert float(rows[5]["order_M_2"]) >= 1.0


def test_observed_order():
    errs = [1.0, 0.25, 0.0625]
    assert cli.observed_order(errs, [2.0, 2.0]) == pytest.approx([2.0, 2.0])


def test_two_run_and_check_kernel(tmp_path, capsys):
    cfg = write(tmp_path, QUICK)
    assert cli.main(["two-run", str(cfg), "--out", str(tmp_path / "t")]) == 0
    d = read_csv(tmp_path / "t" / "distance.csv")
    assert float(d[0]["distance"]) > 0
    assert all(float(r["distance"]) <= float(r["envelope"]) for r in d)
    capsys.readouterr()
    assert cli.main(["check-kernel", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "admissible m0: (0.2, 0.3]" in out and "kappa" in out


def test_load_config_reads_shipped_files():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    c = load_config(root / "canonical.cfg")
    assert c.checks == diagnostics.CHECK_NAMES
    assert load_config(root / "study.cfg").j_values == (1e2, 1e3, 1e4)
