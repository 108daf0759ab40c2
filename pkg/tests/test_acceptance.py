import math

import pytest

from app.core.phase import Domain
from app.core.runner import run_preset
from app.physics.fluid import FluidField, energy_budget, ns_step

PRESET_NAMES = ["gravity-box", "small-perturbation", "poly-decay", "coupled-small", "decaying-force"]


@pytest.mark.slow
@pytest.mark.parametrize("name", PRESET_NAMES)
def test_preset_passes_its_checks(name, tmp_path):
    result = run_preset(name, tmp_path)
    assert result.passed, result.failed_checks
    assert result.manifest["truncated"] is False


def _unforced_residual(dt: float, nz: int, t_end: float = 0.2) -> float:
    slab = Domain(1.0, 1.0, 1.0)
    field = FluidField.shear_mode(1.0, (4, 4, nz), slab)
    fields = [field]
    for _ in range(int(round(t_end / dt))):
        field = ns_step(field, None, dt)
        fields.append(field)
    return energy_budget(fields).residual


@pytest.mark.slow
def test_energy_residual_converges_under_joint_refinement():
    residuals = [_unforced_residual(dt, nz) for dt, nz in ((0.02, 8), (0.01, 16), (0.005, 32))]
    assert all(r > 0 for r in residuals)
    assert residuals[0] < 0.05
    orders = [math.log2(a / b) for a, b in zip(residuals, residuals[1:])]
    assert min(orders) >= 1.0, orders
