import math

import numpy as np
import pytest

from app.core.errors import DivergentFunctional, UnnormalizableSpec
from app.physics.fields import PrescribedField, ZeroField
from app.physics.kinetic import (InitialDataSpec, advance_ensemble, decay_functionals, deposit_moments,
                                 max_principle_holds, measured_nq, moment_growth_envelope, n_q,
                                 propagated_nq_bound, relative_moment_deposit, sample_initial)
from app.physics.oracle import moment_quadrature


def test_box_normalization(box_spec):
    assert box_spec.c == pytest.approx(3.0 / (4.0 * math.pi))
    assert box_spec.total_mass == pytest.approx(1.0)


def test_sampling_is_deterministic_in_the_seed(box_spec):
    a = sample_initial(box_spec, 500, seed=3)
    b = sample_initial(box_spec, 500, seed=3)
    c = sample_initial(box_spec, 500, seed=4)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)
    assert not np.array_equal(a.x, c.x)


def test_box_samples_stay_in_the_support(box_ensemble):
    assert np.all(box_ensemble.x[:, 2] > 0.0)
    assert np.all(box_ensemble.x[:, 2] <= 1.0)
    assert np.all(np.linalg.norm(box_ensemble.v, axis=1) < 1.0)
    assert box_ensemble.alive_mass() == pytest.approx(1.0)


def test_poly_data_samples_in_its_support():
    spec = InitialDataSpec(family="poly_decay", q=8.0, m=3.0, Lmax=8.0)
    ens = sample_initial(spec, 3000, seed=1)
    assert np.all((ens.x[:, 2] > 0.0) & (ens.x[:, 2] <= 8.0))
    assert np.all(ens.f0_value <= spec.sup)
    assert np.all(ens.f0_value > 0.0)


def test_unnormalizable_data_is_rejected():
    spec = InitialDataSpec(family="poly_decay", q=3.0)
    with pytest.raises(UnnormalizableSpec):
        sample_initial(spec, 10, seed=0)
    with pytest.raises(ValueError):
        sample_initial(InitialDataSpec(), 0, seed=0)


def test_gravity_alone_empties_the_box_before_t0(box_ensemble, domain):
    ens = box_ensemble
    masses = [ens.alive_mass()]
    dt = 0.01
    for n in range(300):
        advance_ensemble(ens, n * dt, dt, ZeroField(), 1.0, domain)
        masses.append(ens.alive_mass())
    assert np.all(np.diff(masses) <= 0.0)
    assert ens.alive_count == 0
    assert np.nanmax(ens.exit_time) < 3.0
    assert ens.graveyard()["weight"].sum() == pytest.approx(1.0)


def test_absorbed_particles_keep_their_exit_record(box_ensemble, domain):
    ens = box_ensemble
    advance_ensemble(ens, 0.0, 1.0, ZeroField(), 1.0, domain)
    dead = ~ens.alive
    assert np.any(dead)
    assert np.all(np.isfinite(ens.exit_time[dead]))
    assert np.all(np.isnan(ens.exit_time[ens.alive]))
    assert np.all(ens.exit_time[dead] <= 1.0)


def test_max_principle_under_a_prescribed_field(box_ensemble, domain):
    u = PrescribedField("cellular", 0.02)
    ens = box_ensemble
    for n in range(50):
        advance_ensemble(ens, n * 0.02, 0.02, u, 1.0, domain)
    assert max_principle_holds(ens, ens.meta["f0_sup"])


def test_deposit_conserves_mass_and_momentum(box_ensemble, domain):
    m = deposit_moments(box_ensemble, (4, 4, 12), domain, orders=(2.0,))
    assert m.total(0) == pytest.approx(box_ensemble.alive_mass(), rel=1e-12)
    momentum = box_ensemble.weight @ box_ensemble.v
    assert np.allclose(m.j.sum(axis=(0, 1, 2)) * m.cell_volume, momentum, atol=1e-12)
    assert m.total(2.0) == pytest.approx(box_ensemble.total_moment(2.0), rel=1e-12)


def test_threaded_deposit_matches_serial(box_ensemble, domain):
    serial = deposit_moments(box_ensemble, (4, 4, 12), domain)
    threaded = deposit_moments(box_ensemble, (4, 4, 12), domain, threads=4)
    assert np.allclose(serial.rho, threaded.rho, rtol=1e-13, atol=0)


def test_relative_moment_with_zero_field_is_the_speed_moment(box_ensemble, domain):
    rel = relative_moment_deposit(box_ensemble, np.zeros((4, 4, 12, 3)), 2.0, domain)
    m = deposit_moments(box_ensemble, (4, 4, 12), domain, orders=(2.0,))
    assert np.allclose(rel, m.higher[2.0], rtol=1e-12, atol=1e-14)


def test_box_decay_functionals_in_closed_form(box_spec):
    f = decay_functionals(box_spec, 4.0, 2.0, 2.0)
    assert f.N_q == pytest.approx(box_spec.c * 2.0)
    assert f.H_qm == pytest.approx(box_spec.c * 2.0 * 4.0 * math.pi * (1.0 / 3.0 + 1.0 / 7.0))


def test_n_q_diverges_for_unbounded_tails():
    spec = InitialDataSpec(family="poly_decay", q=5.0)
    with pytest.raises(DivergentFunctional):
        n_q(spec, 6.0)


def test_measured_nq_stays_under_its_propagated_bound(box_spec, box_ensemble, domain):
    ens = box_ensemble
    for n in range(10):
        advance_ensemble(ens, n * 0.1, 0.1, ZeroField(), 1.0, domain)
    assert measured_nq(ens, 2.0) <= propagated_nq_bound(n_q(box_spec, 2.0), 1.0, 2.0, 1.0, 0.0)


def test_moment_growth_envelope_without_a_field():
    assert moment_growth_envelope(2.0, 1.0, 0.6, 0.5, 0.24, 0.0, 1.0) == pytest.approx(0.6 + 2.0 * 0.5)
    with_field = moment_growth_envelope(2.0, 1.0, 0.6, 0.5, 0.24, 0.1, 1.0)
    assert with_field > 1.6


def test_first_moment_stays_under_its_envelope(box_ensemble, domain):
    m1_0 = float(np.sum(box_ensemble.weight * np.linalg.norm(box_ensemble.v, axis=1)))
    dt = 0.05
    for n in range(20):
        advance_ensemble(box_ensemble, n * dt, dt, ZeroField(), 1.0, domain)
    alive = box_ensemble.alive
    m1 = float(np.sum(box_ensemble.weight[alive] * np.linalg.norm(box_ensemble.v[alive], axis=1)))
    # mass never exceeds 1, so ∫M_0 ≤ t
    assert m1 <= moment_growth_envelope(1.0, 1.0, m1_0, 1.0, box_ensemble.meta["f0_sup"], 0.0, 1.0)


def test_sampled_second_moment_agrees_with_quadrature(box_spec):
    ens = sample_initial(box_spec, 10000, seed=21)
    speed_sq = np.sum(ens.v ** 2, axis=1)
    sigma = float(np.std(speed_sq)) / math.sqrt(len(ens))
    assert ens.weight.sum() == pytest.approx(1.0, rel=1e-12)
    assert abs(ens.total_moment(2.0) - moment_quadrature(box_spec, 2.0)) <= 3.0 * sigma
