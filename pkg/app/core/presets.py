"""Named experiments and the post-run checks they assert."""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import integrate

from app.core.config import RunConfig, ValidatedConfig, with_overrides
from app.core.errors import ConfigError, NonPositiveData
from app.core.phase import ParticleEnsemble
from app.physics import diagnostics
from app.physics.egc import (big_t0, predicted_moment_decay,
                             split_representation_check)
from app.physics.fluid import FluidField
from app.physics.kinetic import InitialDataSpec, max_principle_holds
from app.physics.series import DiagnosticsSeries, fit_decay

logger = logging.getLogger(__name__)

DECAY_ORDERS = (2.0, 2.0)
DECAY_EXPONENT_LIMIT = -1.85


@dataclass
class CheckContext:
    cfg: ValidatedConfig
    series: DiagnosticsSeries
    ensemble: Optional[ParticleEnsemble] = None
    fluid: Optional[FluidField] = None
    spec: Optional[InitialDataSpec] = None


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def as_dict(self) -> Dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


CheckFn = Callable[[CheckContext], CheckResult]
CHECKS: Dict[str, CheckFn] = {}


def register_check(name: str) -> Callable[[CheckFn], CheckFn]:
    def wrap(fn: CheckFn) -> CheckFn:
        CHECKS[name] = fn
        return fn
    return wrap


def _all_dead_before(ctx: CheckContext, name: str, limit: float) -> CheckResult:
    ens = ctx.ensemble
    if ens is None:
        return CheckResult(name, False, "no ensemble")
    if ens.alive_count:
        return CheckResult(name, False, f"{ens.alive_count} particles still alive at t={ens.time:.4g}")
    last = diagnostics.ensemble_extinction_time(ens)
    ok = last < limit
    return CheckResult(name, ok, f"last exit {last:.6g} vs limit {limit:.6g}")


@register_check("extinction_before_t0")
def check_extinction_before_t0(ctx: CheckContext) -> CheckResult:
    return _all_dead_before(ctx, "extinction_before_t0", ctx.cfg.t0_data)


@register_check("extinction_before_t0_plus_half")
def check_extinction_before_t0_plus_half(ctx: CheckContext) -> CheckResult:
    return _all_dead_before(ctx, "extinction_before_t0_plus_half", ctx.cfg.t0_data + 0.5)


@register_check("mass_monotone")
def check_mass_monotone(ctx: CheckContext) -> CheckResult:
    ok = diagnostics.mass_monotone(ctx.series)
    mass = ctx.series["alive_mass"]
    return CheckResult("mass_monotone", ok, f"mass {mass[0]:.6g} -> {mass[-1]:.6g}")


@register_check("max_principle")
def check_max_principle(ctx: CheckContext) -> CheckResult:
    f0_sup = ctx.ensemble.meta.get("f0_sup", math.inf) if ctx.ensemble is not None else math.inf
    ok = diagnostics.max_principle_series(ctx.series, f0_sup)
    if ctx.ensemble is not None:
        ok = ok and max_principle_holds(ctx.ensemble, f0_sup)
    return CheckResult("max_principle", ok, f"||f0||_inf = {f0_sup:.6g}")


@register_check("gronwall_envelope")
def check_gronwall_envelope(ctx: CheckContext) -> CheckResult:
    report = diagnostics.gronwall_envelope_check(ctx.series, ctx.cfg.g)
    ok = report.holds and report.flux_holds
    return CheckResult("gronwall_envelope", ok,
                       f"rate {report.rate:.4g}, worst excess {report.worst_excess:.3g}, "
                       f"flux excess {report.flux_excess:.3g}")


@register_check("energy_inequality")
def check_energy_inequality(ctx: CheckContext) -> CheckResult:
    series = ctx.series
    t = series.times
    res = diagnostics.energy_inequality_residual(series, float(t[0]), float(t[-1]))
    scale = (float(series["E"][0]) + float(integrate.trapezoid(np.abs(series["gravity_work"]), t))
             + float(integrate.trapezoid(series["D"], t)))
    tol = ctx.cfg.tolerances["energy"]
    ok = res.residual <= tol * scale
    return CheckResult("energy_inequality", ok, f"residual {res.residual:.4g} vs {tol:g}·{scale:.4g}")


@register_check("brinkman_holder")
def check_brinkman_holder(ctx: CheckContext) -> CheckResult:
    series = ctx.series
    bad = 0
    for i in range(len(series)):
        row = {name: float(series[name][i]) for name in ("brinkman_L2", "brinkman_L3",
                                                        "holder_rhs_L2", "holder_rhs_L3")}
        bad += sum(not diagnostics.brinkman_holder_holds(row, p) for p in diagnostics.HOLDER_ORDERS)
    return CheckResult("brinkman_holder", bad == 0, f"{bad} violations over {len(series)} rows")


@register_check("split_representation")
def check_split_representation(ctx: CheckContext) -> CheckResult:
    ens = ctx.ensemble
    t = ens.time
    if t - 0.5 < ctx.cfg.t0:
        return CheckResult("split_representation", True, f"t={t:.4g} too early, nothing to check")
    split = split_representation_check(ens, t, ctx.cfg.g)
    return CheckResult("split_representation", split.holds,
                       f"{split.violations} alive particles inside (1+{split.L:.3g}) x B(0, 1+{split.R:.3g})")


def _noise_floor(rho: np.ndarray, particle_weight: float, cell_volume: float) -> np.ndarray:
    # three standard deviations of a cell count plus one particle
    unit = particle_weight / cell_volume
    return 3.0 * np.sqrt(np.maximum(rho, 0.0) * unit) + unit


@register_check("moment_decay_envelope")
def check_moment_decay_envelope(ctx: CheckContext) -> CheckResult:
    cfg, series, spec = ctx.cfg, ctx.series, ctx.spec
    name = "moment_decay_envelope"
    t = series.times
    rho = series["rho_sup"]
    T0 = big_t0(cfg.g)
    k1, k2 = DECAY_ORDERS
    later = np.flatnonzero(t > T0)
    if later.size < 2:
        return CheckResult(name, False, f"fewer than two samples after T0={T0:.4g}")

    bounds = np.array([predicted_moment_decay(spec, float(t[i]), k1, k2, cfg.poly_q, 0.0, cfg.g).bound_point
                       for i in later])
    anchor = later[0]
    if rho[anchor] <= 0 and np.any(rho[later] > 0):
        return CheckResult(name, False, f"rho_sup vanishes at t={t[anchor]:.4g} but is positive later")
    constant = rho[anchor] / bounds[0] if bounds[0] > 0 else math.inf
    weight = float(ctx.ensemble.weight[0]) if ctx.ensemble is not None and len(ctx.ensemble) else 0.0
    cell_volume = cfg.domain.area * cfg.domain.Zmax / float(np.prod(cfg.grid))
    allowed = constant * bounds + _noise_floor(rho[later], weight, cell_volume)
    violations = int(np.count_nonzero(rho[later] > allowed))

    positive = later[rho[later] > 0]
    zero = later[rho[later] <= 0]
    hi_idx = positive[positive < zero[0]] if zero.size else positive
    detail = f"C={constant:.4g}, {violations} envelope violations"
    if hi_idx.size < 2:
        return CheckResult(name, False, f"{detail}, exponent not fitted: {hi_idx.size} positive samples after T0")
    try:
        fit = fit_decay(series, "rho_sup", (float(t[anchor]), float(t[hi_idx[-1]])))
    except NonPositiveData as exc:
        return CheckResult(name, False, f"{detail}, exponent not fitted: {exc}")
    ok = violations == 0 and fit.exponent <= DECAY_EXPONENT_LIMIT
    return CheckResult(name, ok, f"{detail}, exponent {fit.exponent:.4g}")


@register_check("decay_envelope")
def check_decay_envelope(ctx: CheckContext) -> CheckResult:
    meta = ctx.series.meta
    ok = bool(meta.get("envelope_holds", 0.0))
    detail = f"Env={meta.get('envelope', math.nan):.4g}, {int(meta.get('envelope_violations', 0))} violations"
    if "fitted_exponent" in meta:
        detail += f", fitted exponent {meta['fitted_exponent']:.4g}"
    return CheckResult("decay_envelope", ok, detail)


@register_check("bootstrap")
def check_bootstrap(ctx: CheckContext) -> CheckResult:
    report = diagnostics.bootstrap_monitor(ctx.series, ctx.cfg.delta0, big_t0(ctx.cfg.g))
    return CheckResult("bootstrap", report.holds,
                       f"margins grad {report.margin_grad:.4g}, u {report.margin_u:.4g} over {report.samples} samples")


DEFAULT_CHECKS: Dict[str, Tuple[str, ...]] = {
    "gravity_only": ("mass_monotone", "max_principle", "gronwall_envelope"),
    "prescribed_field": ("mass_monotone", "max_principle"),
    "coupled": ("mass_monotone", "energy_inequality", "brinkman_holder", "gronwall_envelope"),
    "fluid_only": ("decay_envelope",),
}


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    overrides: Dict[str, object] = field(default_factory=dict)
    checks: Tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self) -> None:
        unknown = [c for c in self.checks if c not in CHECKS]
        if unknown:
            raise ConfigError(f"Preset '{self.name}' names unknown checks: {', '.join(unknown)}")

    def config(self, base: Optional[RunConfig] = None) -> RunConfig:
        return with_overrides(base or RunConfig(), **self.overrides)


def _presets() -> Dict[str, ExperimentPreset]:
    items = [
        ExperimentPreset(
            name="gravity-box",
            overrides=dict(mode="gravity_only", family="box", box_L=1.0, box_R=1.0, particle_count=10000,
                           t_end=4.0, dt=0.01, grid=(8, 8, 24), Zmax=6.0),
            checks=("extinction_before_t0", "mass_monotone", "max_principle", "gronwall_envelope",
                    "split_representation"),
            description="Box data under gravity alone; every particle exits before t0(L, R).",
        ),
        ExperimentPreset(
            name="small-perturbation",
            overrides=dict(mode="prescribed_field", family="box", box_L=1.0, box_R=1.0, particle_count=10000,
                           field_profile="cellular", field_budget_fraction=0.9,
                           t_end_after_t0=0.5, dt=0.01, grid=(8, 8, 24), Zmax=6.0),
            checks=("extinction_before_t0_plus_half", "mass_monotone"),
            description="Prescribed cellular field with sup-norm budget 0.9·kappa_1/2 over [0, t0 + 1/2].",
        ),
        ExperimentPreset(
            name="poly-decay",
            overrides=dict(mode="gravity_only", family="poly_decay", poly_q=8.0, poly_m=3.0, poly_Lmax=8.0,
                           Zmax=16.0, grid=(4, 4, 32), particle_count=200000, dt=0.1, t_end=12.0,
                           diag_every=1),
            checks=("moment_decay_envelope", "mass_monotone", "max_principle"),
            description="Polynomially decaying data; sup of rho_f follows the predicted envelope after T0.",
        ),
        ExperimentPreset(
            name="coupled-small",
            overrides=dict(mode="coupled", family="box", box_L=1.0, box_R=1.0, particle_count=10000,
                           grid=(8, 8, 24), Zmax=6.0, dt=0.01, t_end=4.0, u0_amplitude=0.05,
                           diag_every=5, tolerances={"energy": 0.05}),
            checks=("mass_monotone", "energy_inequality", "brinkman_holder", "gronwall_envelope"),
            description="Full coupling with a small initial shear mode.",
        ),
        ExperimentPreset(
            name="decaying-force",
            overrides=dict(mode="fluid_only", force_C=1.0, force_exponent=1.75, t_end=100.0, dt=0.02,
                           grid=(4, 4, 16), Lx=1.0, Ly=1.0, Zmax=1.0, u0_amplitude=0.01, diag_every=10),
            checks=("decay_envelope",),
            description="Navier–Stokes alone under a force decaying like (1+t)^-7/4.",
        ),
    ]
    return {p.name: p for p in items}


PRESETS: Dict[str, ExperimentPreset] = _presets()


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"Unknown preset '{name}', expected one of {', '.join(sorted(PRESETS))}") from None


def checks_for(cfg: ValidatedConfig, preset: Optional[ExperimentPreset] = None) -> Tuple[str, ...]:
    if preset is not None and preset.checks:
        return preset.checks
    return DEFAULT_CHECKS[cfg.mode]


def run_checks(names, ctx: CheckContext) -> List[CheckResult]:
    results: List[CheckResult] = []
    for name in names:
        try:
            result = CHECKS[name](ctx)
        except (ValueError, ArithmeticError) as exc:
            result = CheckResult(name, False, f"check raised {type(exc).__name__}: {exc}")
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, "Check %s: %s (%s)", name, "passed" if result.passed else "FAILED", result.detail)
        results.append(result)
    return results
