import csv
import io
import math

import pytest

from app.core.config import config_to_text
from app.main import EXIT_ACCEPTANCE, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from app.physics.series import DiagnosticsSeries


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_usage_errors(tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE
    assert main(["run", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["oracle", "no_such_oracle"]) == EXIT_USAGE
    empty = tmp_path / "empty.cfg"
    empty.write_text("", encoding="utf-8")
    assert main(["run", "--config", str(empty), "--out", str(tmp_path / "out")]) == EXIT_USAGE


def test_version_exits_cleanly(capsys):
    assert main(["--version"]) == EXIT_OK
    assert capsys.readouterr().out.strip()


def test_run_from_a_config_file(small_gravity_config, tmp_path, capsys):
    cfg_path = tmp_path / "small.cfg"
    cfg_path.write_text(config_to_text(small_gravity_config), encoding="utf-8")
    code = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out"),
                 "--history-dir", str(tmp_path / "hist")])
    assert code == EXIT_OK
    rows = _rows(capsys.readouterr().out)
    assert [r[0] for r in rows] == ["mass_monotone", "max_principle", "gronwall_envelope"]
    assert all(r[1] == "1" for r in rows)
    assert (tmp_path / "out" / "manifest.json").exists()
    assert (tmp_path / "hist" / "history.jsonl").exists()


def test_run_with_failing_checks_exits_three(tmp_path):
    cfg_path = tmp_path / "short.cfg"
    cfg_path.write_text("t_end = 1.0\nparticle_count = 200\n", encoding="utf-8")
    code = main(["run", "--preset", "gravity-box", "--config", str(cfg_path), "--out", str(tmp_path / "out"),
                 "--history-dir", str(tmp_path / "hist")])
    assert code == EXIT_ACCEPTANCE


def test_decay_fit_on_a_csv(tmp_path, capsys):
    series = DiagnosticsSeries.empty(("time", "rho_sup"))
    for t in range(1, 21):
        series.append({"time": float(t), "rho_sup": 5.0 * (1.0 + t) ** -3.0})
    path = series.to_csv(tmp_path / "series.csv")
    assert main(["decay-fit", str(path), "rho_sup", "1", "20"]) == EXIT_OK
    header, row = _rows(capsys.readouterr().out)
    assert header[2] == "exponent"
    assert float(row[2]) == pytest.approx(-3.0, abs=1e-9)
    assert main(["decay-fit", str(path), "E", "1", "20"]) == EXIT_RUNTIME


def test_oracle_prints_a_float(capsys):
    assert main(["oracle", "dirichlet_eigenvalue", "n=400"]) == EXIT_OK
    assert float(capsys.readouterr().out) == pytest.approx(math.pi ** 2, rel=1e-4)
    assert main(["oracle", "moment", "nonsense"]) == EXIT_USAGE


def test_egc_check_exit_codes(capsys):
    assert main(["egc-check", "--samples", "2000"]) == EXIT_OK
    header, row = _rows(capsys.readouterr().out)
    assert header[0] == "satisfied" and row[0] == "1"
    assert main(["egc-check", "--samples", "200", "--T", "1"]) == EXIT_RUNTIME


@pytest.mark.parametrize("values, exponent", [(lambda t: (1.0 + t) ** -0.75, -0.75), (lambda t: 2.0, 0.0)])
def test_decay_fit_examples(tmp_path, capsys, values, exponent):
    series = DiagnosticsSeries.empty(("time", "q"))
    for t in range(0, 30):
        series.append({"time": float(t), "q": values(float(t))})
    path = series.to_csv(tmp_path / "series.csv")
    assert main(["decay-fit", str(path), "q", "0", "29"]) == EXIT_OK
    _, row = _rows(capsys.readouterr().out)
    assert float(row[2]) == pytest.approx(exponent, abs=1e-6)
