import math

import numpy as np
import pytest

from app.core.errors import DivergentIntegral
from app.physics.fields import ZeroField
from app.physics.kinetic import InitialDataSpec
from app.physics.oracle import (QuadratureSpec, dirichlet_eigenvalue, evaluate_oracle,
                                finite_difference_gradient_check, gravity_exit_time_reference,
                                integrate_1d, interpolation_constant, interpolation_ratio,
                                moment_quadrature, spatial_jacobian_min, sublinear_gronwall)


def test_interpolation_constant_edges():
    assert interpolation_constant(2.0, 2.0) == 1.0
    assert interpolation_constant(2.0, 0.0, sharp=True) < interpolation_constant(2.0, 0.0)
    with pytest.raises(ValueError):
        interpolation_constant(2.0, 3.0)


def test_ball_indicator_attains_the_sharp_constant():
    assert interpolation_ratio([0.0, 1.0], [1.0], 2.0, 0.0, sharp=True) == pytest.approx(1.0)


def test_random_shell_profiles_respect_both_constants(rng):
    for _ in range(50):
        radii = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 1.0, 8))])
        values = rng.uniform(0.0, 2.0, 8)
        values[0] += 0.1
        for k, ell in ((2.0, 0.0), (4.0, 1.0)):
            assert interpolation_ratio(radii, values, k, ell) <= 1.0 + 1e-12
            assert interpolation_ratio(radii, values, k, ell, sharp=True) <= 1.0 + 1e-12


def test_sublinear_gronwall_closed_form():
    y = sublinear_gronwall(1.0, [0.0, 0.5, 1.0], 1.0, 0.5)
    assert y == pytest.approx([1.0, 1.5625, 2.25])
    with pytest.raises(ValueError):
        sublinear_gronwall(1.0, [0.0, 1.0], 1.0, 1.0)


def test_box_moments_by_every_rule():
    spec = InitialDataSpec()
    assert moment_quadrature(spec, 0.0) == pytest.approx(1.0)
    assert moment_quadrature(spec, 2.0) == pytest.approx(0.6, rel=1e-9)
    assert moment_quadrature(spec, 2.0, QuadratureSpec(rule="adaptive_simpson")) == pytest.approx(0.6, rel=1e-8)
    assert moment_quadrature(spec, 2.0, QuadratureSpec(rule="monte_carlo")) == pytest.approx(0.6, rel=1e-4)


def test_unnormalized_amplitude_scales_the_moment():
    spec = InitialDataSpec(normalized=False, amplitude=2.0)
    assert moment_quadrature(spec, 0.0) == pytest.approx(2.0 * 4.0 * math.pi / 3.0)


def test_heavy_tail_moment_diverges():
    spec = InitialDataSpec(family="poly_decay", q=8.0)
    with pytest.raises(DivergentIntegral):
        moment_quadrature(spec, 5.0)
    assert math.isfinite(moment_quadrature(spec, 4.0))


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(target_error=0.0)
    with pytest.raises(ValueError):
        QuadratureSpec(rule="trapezoid")
    assert integrate_1d(lambda x: x ** 3, QuadratureSpec(bounds=(0.0, 2.0))) == pytest.approx(4.0)


def test_exit_reference_from_the_wall():
    assert gravity_exit_time_reference(0.0, 1.0) == 0.0
    s = gravity_exit_time_reference(1.0, 0.0)
    assert 1.0 - (s - 1.0 + math.exp(-s)) == pytest.approx(0.0, abs=1e-12)


def test_spatial_jacobian_without_field_is_one():
    det = spatial_jacobian_min(1.0, [0.1, 0.0, 0.2], ZeroField(), 1.0, [[0.5, 0.5, 3.0], [0.2, 0.1, 4.0]])
    assert det == pytest.approx(1.0, abs=1e-6)


def test_dirichlet_eigenvalue_converges_to_the_continuum():
    assert dirichlet_eigenvalue(400, 1.0) == pytest.approx(math.pi ** 2, rel=1e-4)
    assert dirichlet_eigenvalue(400, 1.0, stagger="face") == pytest.approx(math.pi ** 2, rel=1e-4)
    with pytest.raises(ValueError):
        dirichlet_eigenvalue(8, 1.0, stagger="edge")


def test_richardson_residual_vanishes_for_quadratics():
    fn = lambda p: np.array([p[0] ** 2 + p[1], 3.0 * p[1] * p[0]])
    assert np.max(finite_difference_gradient_check(fn, [0.4, -0.7], 1e-3)) < 1e-8


def test_cli_registry():
    assert evaluate_oracle("sublinear_gronwall", {"t": "1"}) == pytest.approx(2.25)
    assert evaluate_oracle("moment", {"family": "box", "alpha": "2"}) == pytest.approx(0.6, rel=1e-9)
    with pytest.raises(KeyError):
        evaluate_oracle("nope", {})
