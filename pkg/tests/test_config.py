import math

import pytest

from app.core.config import (RunConfig, apply_environment, config_to_text, default_delta0,
                             load_config, parse_config_text, validate_config)
from app.core.errors import (ConfigError, InvalidDelta0, InvalidGrid, InvalidTimeStep,
                             UnknownConfigKey)
from app.physics.egc import kappa


def test_delta0_inside_the_admissible_range_is_kept():
    v = validate_config(RunConfig(delta0=0.05))
    assert v.delta0 == 0.05
    assert v.delta0 * math.exp(v.delta0) < 1.0 / 9.0


@pytest.mark.parametrize("delta0", [0.2, 0.0, -0.01])
def test_delta0_outside_the_range_is_rejected(delta0):
    with pytest.raises(InvalidDelta0):
        validate_config(RunConfig(delta0=delta0))


def test_default_delta0_stays_below_kappa_half():
    d = default_delta0(1.0)
    assert 0 < d < kappa(0.5, 1.0)
    assert validate_config(RunConfig()).delta0 == pytest.approx(d)


def test_derived_times_for_unit_gravity():
    v = validate_config(RunConfig(box_L=1.0, box_R=1.0, Zmax=10.0))
    assert v.t0 == pytest.approx(3.0)
    assert v.T0 == pytest.approx(4.0)
    assert v.t0_data == pytest.approx(3.0)
    assert v.tolerances["exit"] == pytest.approx(1e-9)
    assert v.steps == 400
    # delegated to the wrapped RunConfig
    assert v.mode == "gravity_only"


def test_validation_is_idempotent():
    v = validate_config(RunConfig())
    assert validate_config(v) is v


def test_bad_time_step_and_grid():
    with pytest.raises(InvalidTimeStep):
        validate_config(RunConfig(dt=0.0))
    with pytest.raises(InvalidTimeStep):
        validate_config(RunConfig(dt=5.0, t_end=1.0))
    with pytest.raises(InvalidGrid):
        validate_config(RunConfig(grid=(2, 4, 4)))


def test_unknown_mode_and_box_outside_slab():
    with pytest.raises(ConfigError):
        validate_config(RunConfig(mode="warp"))
    with pytest.raises(ConfigError):
        validate_config(RunConfig(box_L=20.0, Zmax=12.0))


def test_parse_text_with_comments_and_tolerances():
    cfg = parse_config_text(
        "# small run\n"
        "mode = prescribed_field\n"
        "grid = 8, 8, 24\n"
        "tolerances = energy:0.05, div:1e-9\n"
        "deterministic = false\n"
        "delta0 =\n"
    )
    assert cfg.mode == "prescribed_field"
    assert cfg.grid == (8, 8, 24)
    assert cfg.tolerances == {"energy": 0.05, "div": 1e-9}
    assert cfg.deterministic is False
    assert cfg.delta0 is None


def test_empty_config_and_unknown_key():
    with pytest.raises(ConfigError, match="empty"):
        parse_config_text("# nothing here\n\n")
    with pytest.raises(UnknownConfigKey):
        parse_config_text("gravity=1\n")
    with pytest.raises(ConfigError):
        parse_config_text("dt\n")


def test_text_form_reads_back(tmp_path):
    cfg = RunConfig(mode="coupled", grid=(4, 6, 8), tolerances={"energy": 0.05}, field_budget=0.04)
    path = tmp_path / "run.cfg"
    path.write_text(config_to_text(cfg), encoding="utf-8")
    assert load_config(path) == cfg


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("VNS_THREADS", "4")
    monkeypatch.setenv("VNS_DETERMINISTIC", "0")
    cfg = apply_environment(RunConfig())
    assert cfg.threads == 4
    assert cfg.deterministic is False


def test_bad_thread_count_is_ignored(monkeypatch):
    monkeypatch.setenv("VNS_THREADS", "many")
    assert apply_environment(RunConfig()).threads == 1


def test_relative_budget_and_end_time_resolve_on_validation():
    v = validate_config(RunConfig(mode="prescribed_field", g=2.0, field_budget_fraction=0.5, t_end_after_t0=0.25))
    assert v.field_budget == pytest.approx(0.5 * v.kappa_half)
    assert v.t_end == pytest.approx(v.t0_data + 0.25)
    assert v.config.field_budget_fraction == 0.5


def test_relative_settings_are_checked():
    with pytest.raises(ConfigError):
        validate_config(RunConfig(field_budget_fraction=1.5))
    with pytest.raises(ConfigError):
        validate_config(RunConfig(family="poly_decay", Zmax=16.0, t_end_after_t0=0.5))
    assert parse_config_text("t_end_after_t0 = 0.5\n").t_end_after_t0 == 0.5
