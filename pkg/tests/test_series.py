import numpy as np
import pytest

from app.core.errors import MissingColumn, NonPositiveData
from app.physics.series import DiagnosticsSeries, decay_envelope_check, fit_decay


def _series(times, values, name="rho_sup"):
    s = DiagnosticsSeries.empty(("time", name))
    for t, v in zip(times, values):
        s.append({"time": t, name: v})
    return s


def test_power_law_exponent_is_recovered():
    t = np.linspace(1.0, 50.0, 40)
    fit = fit_decay(_series(t, 3.0 * (1.0 + t) ** -2.0), "rho_sup", (1.0, 50.0))
    assert fit.exponent == pytest.approx(-2.0, abs=1e-6)
    assert fit.envelope_constant == pytest.approx(3.0, rel=1e-6)
    assert fit.residual < 1e-9
    assert not fit.super_polynomial


def test_exponential_decay_is_flagged():
    t = np.linspace(1.0, 10.0, 20)
    fit = fit_decay((t, np.exp(-t)), "q", (1.0, 10.0))
    assert fit.super_polynomial
    assert fit.exponent < -2.0


def test_non_positive_and_sparse_windows():
    t = np.linspace(0.0, 4.0, 5)
    with pytest.raises(NonPositiveData):
        fit_decay((t, np.array([1.0, 0.5, 0.0, 0.1, 0.1])), "q", (0.0, 4.0))
    with pytest.raises(NonPositiveData):
        fit_decay((t, np.ones(5)), "q", (3.5, 4.0))
    with pytest.raises(ValueError):
        fit_decay((t, np.ones(5)), "q", (2.0, 1.0))


def test_missing_column():
    with pytest.raises(MissingColumn):
        _series([0.0], [1.0])["E"]


def test_append_pads_new_columns():
    s = _series([0.0, 1.0], [1.0, 2.0])
    s.append({"time": 2.0, "E": 5.0})
    assert len(s) == 3
    assert np.isnan(s["E"][0]) and s["E"][2] == 5.0
    assert np.isnan(s["rho_sup"][2])


def test_csv_keeps_full_precision(tmp_path):
    s = _series([0.0, 0.1], [1.0 / 3.0, np.pi])
    path = s.to_csv(tmp_path / "out" / "series.csv")
    back = DiagnosticsSeries.from_csv(path)
    assert list(back.columns) == ["time", "rho_sup"]
    assert np.array_equal(back["rho_sup"], s["rho_sup"])
    assert path.read_bytes().startswith(b"time,rho_sup\r\n")


def test_envelope_check_counts_violations():
    t = np.linspace(0.0, 10.0, 11)
    ok = decay_envelope_check(t, (1.0 + t) ** -2.0, 1.0, 1.5)
    assert ok.holds and ok.violations == 0
    assert ok.envelope == pytest.approx(2.0 ** -2.0 * 2.0 ** 1.5)
    bad = decay_envelope_check(t, (1.0 + t) ** -1.0, 1.0, 1.5)
    assert not bad.holds
    assert bad.first_violation == pytest.approx(2.0)
