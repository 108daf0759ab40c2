import math

import numpy as np
import pytest

from app.core.errors import DomainError, ExponentViolation
from app.physics.characteristics import gravity_exit_times
from app.physics.egc import (EgcQuery, big_t0, corner_exit_time, egc_sets, kappa, monotone_ratio_check,
                             predicted_moment_decay, sample_egc_box, shifted_egc_sets,
                             split_representation_check, t0, verify_egc)
from app.physics.fields import PrescribedField, ZeroField
from app.physics.kinetic import InitialDataSpec, advance_ensemble, sample_initial


def test_closed_form_constants():
    assert t0(1.0, 1.0, 1.0) == pytest.approx(3.0)
    assert t0(2.0, 1.0, 0.5) == pytest.approx(7.0)
    assert big_t0(1.0) == pytest.approx(4.0)
    assert kappa(0.5, 1.0) == pytest.approx((math.exp(-0.5) - 0.5) / 2.0)
    assert kappa(1.0, 2.0) == pytest.approx(math.exp(-1.0))
    with pytest.raises(DomainError):
        kappa(0.0)


def test_corner_is_the_last_point_to_exit():
    s = corner_exit_time(1.0, 1.0)
    assert s < t0(1.0, 1.0)
    # the box corner is the worst case over the box
    x3 = np.linspace(0.01, 1.0, 25)
    v3 = np.linspace(-1.0, 1.0, 25)
    X3, V3 = np.meshgrid(x3, v3)
    assert np.max(gravity_exit_times(X3.ravel(), V3.ravel(), 1.0)) <= s + 1e-9


def test_egc_sets_grow_from_the_reference_time():
    L0, R0 = egc_sets(3.0)
    L1, R1 = egc_sets(6.0)
    assert L0 > 0 and R0 > 0
    assert L1 > L0 and R1 > R0
    assert shifted_egc_sets(6.5) == pytest.approx(egc_sets(6.0))
    with pytest.raises(DomainError):
        egc_sets(2.0)


def test_egc_sets_exit_by_their_time():
    s = 5.0
    L, R = egc_sets(s)
    assert corner_exit_time(1.0 + L, 1.0 + R) <= s * (1.0 + 1e-9)


def test_ratio_caps_hold():
    assert monotone_ratio_check(1.0).holds


def test_halton_prefixes_are_nested():
    q = EgcQuery(1.0, 1.0, 3.0)
    x_small, v_small = sample_egc_box(q, 64, seed=5)
    x_big, v_big = sample_egc_box(q, 128, seed=5)
    assert np.array_equal(x_small, x_big[:64])
    assert np.all(np.linalg.norm(v_big, axis=1) < 1.0)
    assert np.all((x_big[:, 2] > 0.0) & (x_big[:, 2] <= 1.0))


def test_gravity_only_egc_is_satisfied_at_t0():
    report = verify_egc(EgcQuery(1.0, 1.0, 3.0), "gravity_only", ZeroField(), 4000, seed=1234)
    assert report.satisfied
    assert report.unexited == 0
    assert report.max_exit_time <= corner_exit_time(1.0, 1.0) + 1e-9
    assert report.margin > 0
    assert report.csv_row()[0] == 1


def test_egc_fails_before_the_box_can_empty():
    report = verify_egc(EgcQuery(1.0, 1.0, 1.0), "gravity_only", ZeroField(), 500, seed=1)
    assert not report.satisfied
    assert report.unexited > 0


def test_small_field_budget_keeps_the_half_unit_margin():
    T = t0(1.0, 1.0) + 0.5
    u = PrescribedField.for_budget("cellular", 0.9 * kappa(0.5), T)
    assert u.budget(0.0, T) == pytest.approx(0.9 * kappa(0.5))
    report = verify_egc(EgcQuery(1.0, 1.0, T), "prescribed_field", u, 400, seed=3, dt=0.01)
    assert report.satisfied
    assert report.budget_used == pytest.approx(0.9 * kappa(0.5))


def test_bad_query():
    with pytest.raises(DomainError):
        EgcQuery(-1.0, 1.0, 1.0)


def test_moment_decay_prediction():
    spec = InitialDataSpec(family="poly_decay", q=8.0, m=3.0)
    early = predicted_moment_decay(spec, 3.5, 2.0, 2.0, 8.0, 0.0)
    assert not early.active and math.isnan(early.bound_point)
    a = predicted_moment_decay(spec, 6.0, 2.0, 2.0, 8.0, 0.0)
    b = predicted_moment_decay(spec, 12.0, 2.0, 2.0, 8.0, 0.0)
    assert a.active and b.active
    assert b.bound_point < a.bound_point
    with pytest.raises(ExponentViolation):
        predicted_moment_decay(spec, 6.0, 2.0, 2.0, 5.0, 0.0)


def test_survivors_come_from_outside_the_absorbed_box(domain):
    spec = InitialDataSpec(family="poly_decay", q=8.0, m=3.0, Lmax=4.0)
    ens = sample_initial(spec, 3000, seed=9)
    dt = 0.1
    for n in range(50):
        advance_ensemble(ens, n * dt, dt, ZeroField(), 1.0, domain)
    check = split_representation_check(ens, 5.0)
    assert check.holds
    assert check.violations == 0
