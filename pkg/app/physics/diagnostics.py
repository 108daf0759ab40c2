import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import integrate

from app.core.phase import Domain, ParticleEnsemble
from app.physics.fields import VelocitySampler
from app.physics.fluid import FluidField, GridFieldSampler
from app.physics.kinetic import Grid, MomentField, deposit_moments, relative_moment_deposit
from app.physics.series import COLUMNS, DiagnosticsSeries

logger = logging.getLogger(__name__)

HOLDER_ORDERS = (2.0, 3.0)
D2_WEIGHT = 0.5


def _lp(values: np.ndarray, p: float, vol: float) -> float:
    if values.size == 0:
        return 0.0
    if math.isinf(p):
        return float(np.max(np.abs(values)))
    return float((np.sum(np.abs(values) ** p) * vol) ** (1.0 / p))


def compute_step_diagnostics(ens: Optional[ParticleEnsemble], fluid: Optional[FluidField], t: float, g: float,
                             grid: Grid, domain: Domain, viscosity: float = 1.0,
                             u_sampler: Optional[VelocitySampler] = None, moments: Optional[MomentField] = None,
                             threads: int = 1, deterministic: bool = True,
                             weighted_d2: bool = False) -> Dict[str, float]:
    """One row of energies, dissipations and norms at time t.

    E = ½Σw|v|² + ½‖u‖², D = Σw|u(x_i) − v_i|² + ν‖∇u‖², D_G = D − Σw G·v.
    """
    row: Dict[str, float] = {"time": float(t)}
    cell_volume = domain.area * domain.Zmax / (grid[0] * grid[1] * grid[2])

    if fluid is not None:
        u_sq = fluid.l2_norm_sq()
        grad_sq = fluid.grad_l2_sq()
        u_cells = fluid.cell_velocity()
        row.update({
            "u_L2": math.sqrt(u_sq), "u_Linf": fluid.sup_norm(),
            "grad_u_L2": math.sqrt(grad_sq), "grad_u_Linf": fluid.grad_sup_norm(),
            "div_max": fluid.div_max(),
        })
        if weighted_d2:
            weight = (1.0 + t) ** D2_WEIGHT
            row["weighted_d2_L2"] = weight * fluid.d2_norm(2.0)
            row["weighted_d2_L3"] = weight * fluid.d2_norm(3.0)
        if u_sampler is None:
            u_sampler = GridFieldSampler(fluid)
    else:
        u_sq = grad_sq = 0.0
        u_cells = np.zeros(tuple(grid) + (3,))
        row.update({"u_L2": 0.0, "u_Linf": 0.0, "grad_u_L2": 0.0, "grad_u_Linf": 0.0, "div_max": 0.0})

    kinetic = 0.0
    drag = 0.0
    gravity_work = 0.0
    if ens is not None and ens.alive_count:
        alive = ens.alive
        w = ens.weight[alive]
        v = ens.v[alive]
        speed = np.linalg.norm(v, axis=1)
        kinetic = 0.5 * float(np.sum(w * speed ** 2))
        u_at = u_sampler(t, ens.x[alive]) if u_sampler is not None else np.zeros_like(v)
        drag = float(np.sum(w * np.sum((u_at - v) ** 2, axis=1)))
        # Σ w G·v with G = (0, 0, −g)
        gravity_work = -g * float(np.sum(w * v[:, 2]))
        row.update({
            "alive_mass": float(np.sum(w)),
            "M_0": float(np.sum(w)), "M_1": float(np.sum(w * speed)), "M_2": float(np.sum(w * speed ** 2)),
            "max_pointwise": float(np.max(ens.pointwise_values(t))),
        })
    else:
        row.update({"alive_mass": 0.0, "M_0": 0.0, "M_1": 0.0, "M_2": 0.0, "max_pointwise": 0.0})

    dissipation = drag + viscosity * grad_sq
    row.update({
        "E": kinetic + 0.5 * u_sq,
        "D": dissipation,
        "gravity_work": gravity_work,
        "D_G": dissipation - gravity_work,
    })

    if ens is not None:
        if moments is None:
            moments = deposit_moments(ens, grid, domain, threads=threads, deterministic=deterministic)
        rho = moments.rho
        j_mag = np.linalg.norm(moments.j, axis=-1)
        rho_sup = float(np.max(rho)) if rho.size else 0.0
        F = moments.j - rho[..., None] * u_cells
        F_mag = np.linalg.norm(F, axis=-1)
        row.update({
            "rho_sup": rho_sup,
            "rho_L1": _lp(rho, 1.0, cell_volume), "rho_L2": _lp(rho, 2.0, cell_volume),
            "rho_L3": _lp(rho, 3.0, cell_volume), "rho_Linf": rho_sup,
            "j_L1": _lp(j_mag, 1.0, cell_volume),
        })
        for p in HOLDER_ORDERS:
            tag = int(p)
            row[f"brinkman_L{tag}"] = _lp(F_mag, p, cell_volume)
            relative = relative_moment_deposit(ens, u_cells, p, domain)
            row[f"holder_rhs_L{tag}"] = float((rho_sup ** (p - 1.0) * np.sum(relative) * cell_volume) ** (1.0 / p))
    return row


def brinkman_holder_holds(row: Dict[str, float], p: float, rel_tol: float = 1e-9) -> bool:
    """‖j − ρu‖_{L^p} ≤ ‖ρ‖_∞^{(p−1)/p}(∫∫ f|v−u|^p)^{1/p}, both sides from the same CIC weights."""
    tag = int(p)
    lhs = row.get(f"brinkman_L{tag}", 0.0)
    rhs = row.get(f"holder_rhs_L{tag}", 0.0)
    return bool(lhs <= rhs * (1.0 + rel_tol) + 1e-14)


class DiagnosticsRecorder:
    def __init__(self, g: float, grid: Grid, domain: Domain, viscosity: float = 1.0,
                 threads: int = 1, deterministic: bool = True, weighted_d2: bool = False) -> None:
        self.g = g
        self.grid = tuple(grid)
        self.domain = domain
        self.viscosity = viscosity
        self.threads = threads
        self.deterministic = deterministic
        self.weighted_d2 = weighted_d2
        self.series = DiagnosticsSeries.empty(COLUMNS)
        self.budget_u = 0.0
        self.budget_grad = 0.0
        self.force_sq_integral = 0.0
        self.force_integral = 0.0
        self.initial_h1_sq = 0.0
        self._last: Optional[Tuple[float, float, float, float]] = None

    def start(self, t: float, u_sup: float, grad_sup: float, force_l2: float = 0.0,
              initial_h1_sq: float = 0.0) -> None:
        self.initial_h1_sq = initial_h1_sq
        self._last = (t, u_sup, grad_sup, force_l2)

    def track(self, t: float, u_sup: float, grad_sup: float, force_l2: float = 0.0) -> None:
        if self._last is None:
            self.start(t, u_sup, grad_sup, force_l2)
            return
        t_prev, u_prev, g_prev, f_prev = self._last
        h = t - t_prev
        self.budget_u += 0.5 * h * (u_prev + u_sup)
        self.budget_grad += 0.5 * h * (g_prev + grad_sup)
        self.force_sq_integral += 0.5 * h * (f_prev ** 2 + force_l2 ** 2)
        self.force_integral += 0.5 * h * (f_prev + force_l2)
        self._last = (t, u_sup, grad_sup, force_l2)

    def set_budgets(self, budget_u: float, budget_grad: float) -> None:
        self.budget_u = budget_u
        self.budget_grad = budget_grad

    @property
    def strong_time_lhs(self) -> float:
        return self.initial_h1_sq + self.force_sq_integral + self.force_integral

    def sample(self, ens: Optional[ParticleEnsemble], fluid: Optional[FluidField], t: float,
               u_sampler: Optional[VelocitySampler] = None,
               moments: Optional[MomentField] = None) -> Dict[str, float]:
        row = compute_step_diagnostics(
            ens, fluid, t, self.g, self.grid, self.domain, self.viscosity, u_sampler, moments,
            self.threads, self.deterministic, self.weighted_d2,
        )
        row["budget_u"] = self.budget_u
        row["budget_grad"] = self.budget_grad
        row["strong_time_lhs"] = self.strong_time_lhs
        self.series.append(row)
        return row


# --- post-hoc checks ---------------------------------------------------------

def extinction_time(series: DiagnosticsSeries) -> Optional[float]:
    mass = series["alive_mass"]
    gone = np.flatnonzero(mass <= 0.0)
    return float(series.times[gone[0]]) if gone.size else None


def ensemble_extinction_time(ens: ParticleEnsemble) -> Optional[float]:
    if ens.alive_count:
        return None
    return float(np.max(ens.exit_time)) if len(ens) else 0.0


def mass_monotone(series: DiagnosticsSeries) -> bool:
    return bool(np.all(np.diff(series["alive_mass"]) <= 0.0))


def max_principle_series(series: DiagnosticsSeries, f0_sup: float) -> bool:
    t = series.times
    return bool(np.all(series["max_pointwise"] <= np.exp(3.0 * t) * f0_sup * (1.0 + 1e-12)))


@dataclass(frozen=True)
class BootstrapReport:
    holds: bool
    first_violation: Optional[float]
    margin_grad: float
    margin_u: float
    samples: int


def bootstrap_monitor(series: DiagnosticsSeries, delta0: float, T0: float) -> BootstrapReport:
    """∫_{T0}^t ‖∇u‖_∞ < δ0 and ∫_{T0}^t ‖u‖_∞ < δ0/2 at every sampled t ≥ T0."""
    t = series.times
    later = t >= T0
    if not np.any(later):
        return BootstrapReport(holds=True, first_violation=None, margin_grad=delta0, margin_u=delta0 / 2.0, samples=0)
    grad = series["budget_grad"]
    u = series["budget_u"]
    grad_from = grad[later] - np.interp(T0, t, grad)
    u_from = u[later] - np.interp(T0, t, u)
    bad = (grad_from >= delta0) | (u_from >= delta0 / 2.0)
    first = float(t[later][bad][0]) if np.any(bad) else None
    report = BootstrapReport(
        holds=first is None,
        first_violation=first,
        margin_grad=float(delta0 - np.max(grad_from)),
        margin_u=float(delta0 / 2.0 - np.max(u_from)),
        samples=int(np.count_nonzero(later)),
    )
    if first is not None:
        logger.warning("Bootstrap budgets exceeded at t=%.4g (delta0=%g)", first, delta0)
    return report


@dataclass(frozen=True)
class EnergyResidual:
    s: float
    t: float
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs


def energy_inequality_residual(series: DiagnosticsSeries, s: float, t: float) -> EnergyResidual:
    """E(t) + ∫ₛᵗD − E(s) − ∫ₛᵗ Σw G·v, trapezoid over the sampled rows in [s, t]."""
    times = series.times
    keep = (times >= s) & (times <= t)
    if np.count_nonzero(keep) < 2:
        return EnergyResidual(s=s, t=t, lhs=0.0, rhs=0.0)
    tt = times[keep]
    E = series["E"][keep]
    D = series["D"][keep]
    work = series["gravity_work"][keep]
    lhs = float(E[-1] + integrate.trapezoid(D, tt))
    rhs = float(E[0] + integrate.trapezoid(work, tt))
    return EnergyResidual(s=float(tt[0]), t=float(tt[-1]), lhs=lhs, rhs=rhs)


@dataclass(frozen=True)
class GronwallReport:
    holds: bool
    rate: float
    worst_excess: float
    flux_holds: bool
    flux_excess: float


def gronwall_envelope_check(series: DiagnosticsSeries, g: float, rel_tol: float = 1e-6) -> GronwallReport:
    """E(t) ≤ (E(0)^{1/2} + h·t/2)² with h = g·(2M0(0))^{1/2}, and the matching bound on ∫‖j_f‖_{L¹}.

    dE/dt ≤ Σw G·v ≤ g·M0^{1/2}(2E)^{1/2} gives the sublinear Grönwall rate h;
    ∫‖j_f‖_{L¹} ≤ (2M0)^{1/2}∫E^{1/2} then integrates the same envelope.
    """
    t = series.times - series.times[0]
    E = series["E"]
    M0 = float(series["M_0"][0])
    h = g * math.sqrt(2.0 * max(M0, 0.0))
    root0 = math.sqrt(max(E[0], 0.0))
    envelope = (root0 + 0.5 * h * t) ** 2
    excess = E - envelope * (1.0 + rel_tol)
    flux = integrate.cumulative_trapezoid(series["j_L1"], t, initial=0.0) if "j_L1" in series else np.zeros_like(t)
    flux_bound = math.sqrt(2.0 * max(M0, 0.0)) * (root0 * t + 0.25 * h * t ** 2)
    flux_excess = flux - flux_bound * (1.0 + rel_tol)
    slack = rel_tol * max(1.0, float(np.max(np.abs(E))))
    return GronwallReport(
        holds=bool(np.all(excess <= slack)),
        rate=h,
        worst_excess=float(np.max(excess)),
        flux_holds=bool(np.all(flux_excess <= slack)),
        flux_excess=float(np.max(flux_excess)),
    )


def flux_series(ens: ParticleEnsemble, bin_width: float, t_end: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    grave = ens.graveyard()
    exits = grave["exit_time"]
    horizon = ens.time if t_end is None else t_end
    if exits.size:
        horizon = max(horizon, float(np.max(exits)))
    n_bins = max(1, int(math.ceil(horizon / bin_width - 1e-12)))
    edges = np.arange(n_bins + 1) * bin_width
    mass, _ = np.histogram(exits, bins=edges, weights=grave["weight"])
    return edges, mass
