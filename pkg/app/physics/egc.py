"""Exit geometric condition (EGC) machinery.

Closed forms for the gravity-only flow (t0, the reverse sets L_g/R_g, κ_α),
the moment-decay prediction built on them, and empirical EGC verification
by quasi-Monte-Carlo sampling of the initial box.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from app.core.errors import DomainError, ExponentViolation
from app.core.parallel import chunked_map
from app.core.phase import ParticleEnsemble
from app.physics.characteristics import (coupled_flow_step_arrays,
                                         gravity_exit_times, phi1)
from app.physics.fields import VelocitySampler, ZeroField
from app.physics.kinetic import InitialDataSpec, f_qmr, h_qm, k_qr, n_q

logger = logging.getLogger(__name__)

HALF_SHIFT = 0.5


def t0(L: float, R: float, g: float = 1.0) -> float:
    return (L + R + g) / g


def kappa(alpha: float, g: float = 1.0) -> float:
    """(e^{−α} + α − 1)·g/2."""
    if alpha <= 0:
        raise DomainError(f"kappa needs alpha > 0, got {alpha}")
    return (math.expm1(-alpha) + alpha) * g / 2.0


def reference_t0(g: float = 1.0) -> float:
    return t0(1.0, 1.0, g)


def big_t0(g: float = 1.0) -> float:
    return reference_t0(g) + 1.0


def egc_sets(s: float, g: float = 1.0) -> Tuple[float, float]:
    """(L_g(s), R_g(s)) for s ≥ t0(1,1): the gravity-only flow empties
    (0, 1+L_g(s)) × B(0, 1+R_g(s)) by time s."""
    start = reference_t0(g)
    if s < start * (1.0 - 1e-14):
        raise DomainError(f"egc_sets needs s >= t0(1,1) = {start:.6g}, got {s}")
    p = float(phi1(s))
    L = 0.5 * (s * g - p * g) - 1.0
    R = 0.5 * (s * g / p - g) - 1.0
    return L, R


def shifted_egc_sets(t: float, g: float = 1.0) -> Tuple[float, float]:
    return egc_sets(t - HALF_SHIFT, g)


def corner_exit_time(L: float, R: float, g: float = 1.0, tol_exit: float = 1e-12) -> float:
    """Gravity-only exit time from x3 = L, v = (0, 0, R), the supremum over the box."""
    return float(gravity_exit_times(L, R, g, tol_exit)[0])


@dataclass(frozen=True)
class MonotoneRatioReport:
    holds: bool
    worst_L: float
    worst_R: float


def monotone_ratio_check(g: float = 1.0, s_grid: Optional[Sequence[float]] = None) -> MonotoneRatioReport:
    """(1+s)/(1+L_g(s)) and (1+s)/(1+R_g(s)) never exceed their value at t0(1,1)."""
    start = reference_t0(g)
    if s_grid is None:
        s_grid = np.linspace(start, start + 200.0, 20001)[1:]
    s = np.asarray(s_grid, dtype=np.float64)
    L0, R0 = egc_sets(start, g)
    cap_L = (1.0 + start) / (1.0 + L0)
    cap_R = (1.0 + start) / (1.0 + R0)
    p = phi1(s)
    L = 0.5 * (s * g - p * g) - 1.0
    R = 0.5 * (s * g / p - g) - 1.0
    excess_L = float(np.max((1.0 + s) / (1.0 + L) - cap_L))
    excess_R = float(np.max((1.0 + s) / (1.0 + R) - cap_R))
    slack = 1e-12 * max(cap_L, cap_R)
    return MonotoneRatioReport(holds=excess_L <= slack and excess_R <= slack, worst_L=excess_L, worst_R=excess_R)


# --- empirical EGC ----------------------------------------------------------

@dataclass(frozen=True)
class EgcQuery:
    L: float
    R: float
    T: float

    def __post_init__(self) -> None:
        if not (self.L > 0 and self.R > 0 and self.T > 0):
            raise DomainError(f"EGC query needs positive L, R, T, got {self}")


@dataclass(frozen=True)
class EgcReport:
    satisfied: bool
    max_exit_time: float
    margin: float
    sample_count: int
    budget_used: float
    unexited: int = 0

    CSV_HEADER = ("satisfied", "max_exit_time", "margin", "sample_count", "budget_used", "unexited")

    def csv_row(self) -> Tuple:
        return (int(self.satisfied), repr(self.max_exit_time), repr(self.margin),
                self.sample_count, repr(self.budget_used), self.unexited)


def sample_egc_box(query: EgcQuery, samples: int, seed: int, Lx: float = 1.0,
                   Ly: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Scrambled Halton points in cell × (0, L) × B(0, R); prefixes are nested in ``samples``."""
    sampler = qmc.Halton(d=6, scramble=True, seed=seed)
    u = sampler.random(samples)
    tiny = np.finfo(float).tiny
    x = np.column_stack([u[:, 0] * Lx, u[:, 1] * Ly, np.maximum(u[:, 2], tiny) * query.L])
    radius = query.R * u[:, 3] ** (1.0 / 3.0)
    cos_theta = 1.0 - 2.0 * u[:, 4]
    sin_theta = np.sqrt(np.maximum(0.0, 1.0 - cos_theta ** 2))
    phi = 2.0 * math.pi * u[:, 5]
    v = np.column_stack([radius * sin_theta * np.cos(phi), radius * sin_theta * np.sin(phi), radius * cos_theta])
    return x, v


def _stepped_exit_times(x: np.ndarray, v: np.ndarray, T: float, u: VelocitySampler, g: float,
                        dt: float, tol_exit: float) -> np.ndarray:
    n_steps = max(1, int(math.ceil(T / dt - 1e-12)))
    h = T / n_steps
    exits = np.full(x.shape[0], np.inf)
    alive = np.arange(x.shape[0])
    x, v = x.copy(), v.copy()
    t = 0.0
    for _ in range(n_steps):
        if alive.size == 0:
            break
        X, V, s = coupled_flow_step_arrays(x, v, t, h, u, g, tol_exit)
        hit = np.isfinite(s)
        exits[alive[hit]] = t + s[hit]
        keep = ~hit
        alive, x, v = alive[keep], X[keep], V[keep]
        t += h
    return exits


def verify_egc(query: EgcQuery, mode: str, u: VelocitySampler, samples: int, seed: int,
               g: float = 1.0, dt: float = 1e-2, Lx: float = 1.0, Ly: float = 1.0,
               tol_exit: float = 1e-10, threads: int = 1) -> EgcReport:
    """Sample the box, follow each point to exit or to T, report the worst exit time."""
    x, v = sample_egc_box(query, samples, seed, Lx, Ly)
    if mode == "gravity_only" or isinstance(u, ZeroField):
        exits = gravity_exit_times(x[:, 2], v[:, 2], g, tol_exit)
        exits = np.where(exits < query.T, exits, np.inf)
        budget = 0.0
    else:
        u.available(query.T)
        parts = chunked_map(
            lambda lo, hi: _stepped_exit_times(x[lo:hi], v[lo:hi], query.T, u, g, dt, tol_exit),
            samples, threads=threads, deterministic=True,
        )
        exits = np.concatenate(parts)
        budget = u.budget(0.0, query.T)

    unexited = int(np.count_nonzero(~np.isfinite(exits)))
    max_exit = float(np.max(exits)) if samples else 0.0
    satisfied = bool(max_exit < query.T)
    report = EgcReport(
        satisfied=satisfied,
        max_exit_time=max_exit,
        margin=query.T - max_exit,
        sample_count=int(samples),
        budget_used=float(budget),
        unexited=unexited,
    )
    logger.info("EGC L=%g R=%g T=%g mode=%s: satisfied=%s max_exit=%.6g", query.L, query.R,
                query.T, mode, satisfied, max_exit)
    return report


# --- absorption split and decay prediction ----------------------------------

@dataclass(frozen=True)
class SplitCheck:
    holds: bool
    violations: int
    L: float
    R: float


def split_representation_check(ens: ParticleEnsemble, t: float, g: float = 1.0,
                               shift: float = HALF_SHIFT) -> SplitCheck:
    """Every alive particle at t must come from |v0| ≥ 1+R or x0_3 ≥ 1+L, (L, R) = sets at t − shift."""
    L, R = egc_sets(t - shift, g)
    alive = ens.alive
    speed0 = np.linalg.norm(ens.origin_v[alive], axis=1)
    height0 = ens.origin_x[alive, 2]
    inside = (speed0 < 1.0 + R) & (height0 < 1.0 + L)
    violations = int(np.count_nonzero(inside))
    if violations:
        logger.warning("Split check at t=%.4g: %d alive particles started inside the absorbed box", t, violations)
    return SplitCheck(holds=violations == 0, violations=violations, L=L, R=R)


@dataclass(frozen=True)
class MomentDecayPrediction:
    active: bool
    bound_point: float
    bound_Lr: float
    L: float = math.nan
    R: float = math.nan


def predicted_moment_decay(spec: InitialDataSpec, t: float, k1: float, k2: float, q: float, ell: float,
                           g: float = 1.0, r: float = 2.0, constant: float = 1.0) -> MomentDecayPrediction:
    """C·[N_q/(1+R(t))^{k1} + H_{ℓ,k2}/(1+L(t))^{k2}] and its L^r analogue with K_{q,r}, F_{ℓ,k2,r}.

    Inactive (NaN bounds) for t ≤ T0, where only local-in-time control holds.
    """
    if not q > k1 + ell + 3.0:
        raise ExponentViolation(f"need q > k1 + l + 3, got q={q}, k1={k1}, l={ell}")
    if t <= big_t0(g):
        return MomentDecayPrediction(active=False, bound_point=math.nan, bound_Lr=math.nan)
    L, R = shifted_egc_sets(t, g)
    bound_point = constant * (n_q(spec, q) / (1.0 + R) ** k1 + h_qm(spec, ell, k2) / (1.0 + L) ** k2)
    bound_Lr = constant * (k_qr(spec, q, r) / (1.0 + R) ** k1 + f_qmr(spec, ell, k2, r) / (1.0 + L) ** k2)
    return MomentDecayPrediction(active=True, bound_point=bound_point, bound_Lr=bound_Lr, L=L, R=R)
