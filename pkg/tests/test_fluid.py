import numpy as np
import pytest

from app.core.errors import CflViolation, FieldHistoryUnavailable, GridMismatch
from app.core.phase import Domain
from app.physics.fields import PrescribedField
from app.physics.fluid import (BrinkmanSource, FieldHistory, FluidField, GridFieldSampler, TruncationMonitor,
                               _advection, build_brinkman, cfl_number, decaying_force_experiment, energy_budget,
                               ns_step)
from app.physics.kinetic import MomentField, deposit_moments
from app.physics.oracle import dirichlet_eigenvalue

GRID = (4, 4, 16)
SLAB = Domain(1.0, 1.0, 1.0)


def test_rest_stays_at_rest():
    out = ns_step(FluidField.zeros(GRID, SLAB), None, 0.01)
    assert out.face_max() == 0.0
    assert out.time == pytest.approx(0.01)


def test_shear_mode_decays_at_the_crank_nicolson_rate():
    dt, steps = 0.01, 10
    field = FluidField.shear_mode(1.0, GRID, SLAB)
    start = field.u1.copy()
    for _ in range(steps):
        field = ns_step(field, None, dt, viscosity=1.0)
    lam = dirichlet_eigenvalue(GRID[2], SLAB.Zmax, 1, "cell")
    factor = ((1.0 - 0.5 * dt * lam) / (1.0 + 0.5 * dt * lam)) ** steps
    assert np.allclose(field.u1, factor * start, rtol=1e-9, atol=1e-14)
    assert np.max(np.abs(field.u2)) < 1e-14
    assert np.max(np.abs(field.u3)) < 1e-14


def test_projection_removes_divergence_of_a_sampled_field():
    domain = Domain(1.0, 1.0, 4.0)
    field = FluidField.from_sampler(PrescribedField("cellular", 0.2), 0.0, (8, 4, 16), domain)
    out = ns_step(field, None, 0.005)
    hx, hy, hz = out.spacing
    assert out.div_max() <= 1e-8 * out.face_max() / min(hx, hy, hz)
    assert np.all(out.u3[..., 0] == 0.0) and np.all(out.u3[..., -1] == 0.0)


def test_forcing_accelerates_the_rest_state():
    F = np.zeros(GRID + (3,))
    F[..., 0] = 1.0
    out = ns_step(FluidField.zeros(GRID, SLAB), F, 0.01)
    assert np.all(out.u1 > 0.0)
    assert out.div_max() < 1e-10


def test_cfl_violation():
    field = FluidField.shear_mode(100.0, GRID, SLAB)
    assert cfl_number(field, 0.1) > 0.5
    with pytest.raises(CflViolation):
        ns_step(field, None, 0.1)


def test_inconsistent_arrays_and_grids():
    with pytest.raises(GridMismatch):
        FluidField(u1=np.zeros((4, 4, 4)), u2=np.zeros((4, 4, 4)), u3=np.zeros((4, 4, 4)),
                   p=np.zeros((4, 4, 4)), time=0.0, domain=SLAB)
    moments = MomentField(rho=np.zeros((4, 4, 8)), j=np.zeros((4, 4, 8, 3)))
    with pytest.raises(GridMismatch):
        build_brinkman(moments, FluidField.zeros(GRID, SLAB))
    with pytest.raises(GridMismatch):
        ns_step(FluidField.zeros(GRID, SLAB), np.zeros((4, 4, 8, 3)), 0.01)


def test_brinkman_force_on_fluid_at_rest_is_the_momentum(box_ensemble, domain):
    grid = (4, 4, 12)
    moments = deposit_moments(box_ensemble, grid, domain)
    F = build_brinkman(moments, FluidField.zeros(grid, domain))
    assert np.allclose(F.F, moments.j)
    assert F.work(FluidField.zeros(grid, domain)) == 0.0
    assert BrinkmanSource.zeros(grid, domain).lp_norm(2.0) == 0.0


def test_unforced_energy_budget_closes():
    field = FluidField.shear_mode(1.0, GRID, SLAB)
    fields = [field]
    for _ in range(20):
        field = ns_step(field, None, 0.001)
        fields.append(field)
    report = energy_budget(fields)
    assert report.rhs > 0
    assert abs(report.residual) <= 1e-4 * report.rhs


def test_grid_sampler_is_zero_below_the_wall():
    field = FluidField.shear_mode(1.0, GRID, SLAB)
    sampler = GridFieldSampler(field)
    pts = np.array([[0.3, 0.3, -0.2], [0.3, 0.3, 0.5]])
    values = sampler(0.0, pts)
    assert np.all(values[0] == 0.0)
    assert values[1, 0] == pytest.approx(1.0, abs=0.02)


def test_history_interpolates_linearly_in_time():
    history = FieldHistory(capacity=4)
    history.push(FluidField.shear_mode(1.0, GRID, SLAB, time=0.0))
    history.push(FluidField.shear_mode(3.0, GRID, SLAB, time=1.0))
    sampler = history.sampler()
    pt = np.array([0.4, 0.6, 0.5])
    a, b = sampler(0.0, pt), sampler(1.0, pt)
    assert np.allclose(sampler(0.5, pt), 0.5 * (a + b))
    assert sampler.budget(0.0, 1.0) == pytest.approx(0.5 * (sampler.sup_norm(0.0) + sampler.sup_norm(1.0)))


def test_history_window_errors():
    with pytest.raises(ValueError):
        FieldHistory(capacity=1)
    history = FieldHistory(capacity=2)
    history.push(FluidField.zeros(GRID, SLAB, time=0.0))
    history.push(FluidField.zeros(GRID, SLAB, time=0.1))
    with pytest.raises(ValueError):
        history.push(FluidField.zeros(GRID, SLAB, time=0.05))
    history.push(FluidField.zeros(GRID, SLAB, time=0.2))
    assert history.window == pytest.approx((0.1, 0.2))
    with pytest.raises(FieldHistoryUnavailable):
        history.sampler().available(0.0)


def test_truncation_monitor_flags_particles_near_the_top(box_ensemble, domain):
    monitor = TruncationMonitor(domain)
    assert not monitor.check(0.0, None, box_ensemble).flagged
    box_ensemble.x[0, 2] = 0.95 * domain.Zmax
    assert monitor.check(0.1, None, box_ensemble).flagged
    assert monitor.flagged_steps == 1


def test_unforced_decay_experiment_stays_under_its_envelope():
    series = decaying_force_experiment(0.0, 1.75, 2.0, grid=GRID, domain=SLAB, dt=0.01)
    assert series.meta["envelope_holds"] == 1.0
    assert series.meta["fitted_exponent"] < -1.5
    assert np.all(np.diff(series["u_L2"]) < 0.0)


def test_advection_does_no_work_on_a_solenoidal_field():
    domain = Domain(1.0, 1.0, 4.0)
    field = ns_step(FluidField.from_sampler(PrescribedField("cellular", 0.2), 0.0, (8, 4, 16), domain), None, 0.005)
    a1, a2, a3 = _advection(field)
    work = float(np.sum(field.u1 * a1) + np.sum(field.u2 * a2) + np.sum(field.u3[..., 1:-1] * a3))
    scale = np.sqrt(field.l2_norm_sq() / field.cell_volume) * np.sqrt(np.sum(a1 ** 2) + np.sum(a2 ** 2) + np.sum(a3 ** 2))
    assert scale > 0.0
    assert abs(work) <= 1e-6 * scale
