"""Particle discretization of the Vlasov equation with an absorbing wall.

f is carried by an equal-weight ensemble. Moments use the measure view
(constant weights); N_q and the maximum principle use the pointwise view
e^{3t}·f0(z0) along each surviving characteristic.
"""
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy import integrate, optimize

from app.core.errors import DivergentFunctional, UnnormalizableSpec
from app.core.parallel import chunked_map
from app.core.phase import Domain, ParticleEnsemble
from app.physics.characteristics import (coupled_flow_step_arrays,
                                         gravity_exit_times,
                                         gravity_flow_arrays)
from app.physics.fields import VelocitySampler, ZeroField

logger = logging.getLogger(__name__)

Grid = Tuple[int, int, int]

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class InitialDataSpec:
    """Analytic f0 on the periodic cell, uniform in (x1, x2).

    box:        c·1{0 < x3 < L}·1{|v| < R}
    poly_decay: c·(1+|v|^q)^{-1}(1+x3^m)^{-1} on |v| < Rmax, 0 < x3 < Lmax
    With ``normalized`` the amplitude c gives total mass 1; otherwise
    ``amplitude`` is used as given.
    """

    family: str = "box"
    L: float = 1.0
    R: float = 1.0
    q: float = 8.0
    m: float = 3.0
    Rmax: float = math.inf
    Lmax: float = 8.0
    Lx: float = 1.0
    Ly: float = 1.0
    normalized: bool = True
    amplitude: float = 1.0

    @classmethod
    def from_config(cls, cfg) -> "InitialDataSpec":
        return cls(
            family=cfg.family, L=cfg.box_L, R=cfg.box_R, q=cfg.poly_q, m=cfg.poly_m,
            Rmax=cfg.poly_Rmax, Lmax=cfg.poly_Lmax, Lx=cfg.Lx, Ly=cfg.Ly,
        )

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @functools.cached_property
    def vertical_mass(self) -> float:
        if self.family == "box":
            return self.L
        value, _ = integrate.quad(lambda z: 1.0 / (1.0 + z ** self.m), 0.0, self.Lmax, limit=200)
        return value

    @functools.cached_property
    def velocity_mass(self) -> float:
        if self.family == "box":
            return FOUR_PI * self.R ** 3 / 3.0
        if math.isinf(self.Rmax) and self.q <= 3.0:
            return math.inf
        value, _ = integrate.quad(lambda r: r * r / (1.0 + r ** self.q), 0.0, self.Rmax, limit=200)
        return FOUR_PI * value

    @functools.cached_property
    def c(self) -> float:
        if not self.normalized:
            return float(self.amplitude)
        shape_mass = self.area * self.vertical_mass * self.velocity_mass
        if not (math.isfinite(shape_mass) and shape_mass > 0):
            raise UnnormalizableSpec(f"{self.family} data has mass {shape_mass}; cannot normalize.")
        return 1.0 / shape_mass

    @property
    def total_mass(self) -> float:
        return self.c * self.area * self.vertical_mass * self.velocity_mass

    def density(self, x3, speed) -> np.ndarray:
        x3 = np.asarray(x3, dtype=np.float64)
        speed = np.asarray(speed, dtype=np.float64)
        if self.family == "box":
            inside = (x3 > 0) & (x3 < self.L) & (speed < self.R)
            return np.where(inside, self.c, 0.0)
        inside = (x3 > 0) & (x3 < self.Lmax) & (speed < self.Rmax)
        value = self.c / ((1.0 + speed ** self.q) * (1.0 + x3 ** self.m))
        return np.where(inside, value, 0.0)

    @property
    def sup(self) -> float:
        return abs(self.c)


@dataclass
class MomentField:
    rho: np.ndarray
    j: np.ndarray
    higher: Dict[float, np.ndarray] = field(default_factory=dict)
    cell_volume: float = 1.0
    time: float = 0.0

    @property
    def grid(self) -> Grid:
        return tuple(self.rho.shape)

    def integral(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.cell_volume)

    def total(self, alpha: float) -> float:
        if alpha == 0:
            return self.integral(self.rho)
        return self.integral(self.higher[alpha])


# --- sampling ---------------------------------------------------------------

def _inverse_cdf_table(density, lo: float, hi: float, dense: int = 4001) -> Tuple[np.ndarray, np.ndarray]:
    if hi <= 1.0:
        grid = np.linspace(lo, hi, dense)
    else:
        grid = np.concatenate([np.linspace(lo, 1.0, dense), np.geomspace(1.0, hi, dense)[1:]])
    cdf = integrate.cumulative_trapezoid(density(grid), grid, initial=0.0)
    return cdf / cdf[-1], grid


def _radial_cutoff(q: float, Rmax: float) -> float:
    # radius beyond which the r^{2-q} tail holds less than 1e-12 of the mass
    if math.isfinite(Rmax):
        return Rmax
    return max(10.0, (1e-12 * (q - 3.0)) ** (1.0 / (3.0 - q)))


def _unit_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    d = rng.standard_normal((n, 3))
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return d / norms


def sample_initial(spec: InitialDataSpec, N: int, seed: int) -> ParticleEnsemble:
    if N < 1:
        raise ValueError("N must be at least 1")
    mass = spec.total_mass
    if not (math.isfinite(mass) and mass > 0):
        raise UnnormalizableSpec(f"{spec.family} data has mass {mass}; nothing to sample.")

    rng = np.random.default_rng(seed)
    x = np.empty((N, 3))
    x[:, 0] = rng.uniform(0.0, spec.Lx, N)
    x[:, 1] = rng.uniform(0.0, spec.Ly, N)
    directions = _unit_directions(rng, N)

    if spec.family == "box":
        x[:, 2] = spec.L * (1.0 - rng.random(N))
        radii = spec.R * rng.random(N) ** (1.0 / 3.0)
    else:
        z_cdf, z_grid = _inverse_cdf_table(lambda z: 1.0 / (1.0 + z ** spec.m), 0.0, spec.Lmax)
        x[:, 2] = np.interp(1.0 - rng.random(N), z_cdf, z_grid)
        x[:, 2] = np.clip(x[:, 2], np.finfo(float).tiny, None)
        r_hi = _radial_cutoff(spec.q, spec.Rmax)
        r_cdf, r_grid = _inverse_cdf_table(lambda r: r * r / (1.0 + r ** spec.q), 0.0, r_hi)
        radii = np.interp(rng.random(N), r_cdf, r_grid)
    v = directions * radii[:, None]

    f0 = spec.density(x[:, 2], radii)
    weight = np.full(N, mass / N)
    ens = ParticleEnsemble.from_arrays(x, v, weight, f0, time=0.0)
    ens.meta["f0_sup"] = spec.sup
    logger.debug("Sampled %d %s particles (seed=%d)", N, spec.family, seed)
    return ens


# --- transport --------------------------------------------------------------

def advance_ensemble(ens: ParticleEnsemble, t: float, dt: float, u: VelocitySampler, g: float,
                     domain: Domain, tol_exit: float = 1e-10, threads: int = 1,
                     deterministic: bool = True) -> ParticleEnsemble:
    """Move every alive particle from t to t+dt, absorbing those that reach x3 = 0.

    Updates the ensemble in place and returns it. Weights are never rescaled;
    absorbed particles keep their weight and exit time in the graveyard.
    """
    idx = np.flatnonzero(ens.alive)
    t_next = t + dt
    if idx.size == 0:
        ens.time = t_next
        return ens

    if isinstance(u, ZeroField):
        # exact from the origin: the gravity-only history is known in closed form
        if ens.scheduled_exit is None or ens.scheduled_exit.shape[0] != len(ens):
            ens.scheduled_exit = gravity_exit_times(ens.origin_x[:, 2], ens.origin_v[:, 2], g, tol_exit)
        ox, ov = ens.origin_x[idx], ens.origin_v[idx]
        s = ens.scheduled_exit[idx]
        hit = s <= t_next
        stop = np.where(hit, s, t_next)[:, None]
        X, V = gravity_flow_arrays(stop, 0.0, ox, ov, g)
        exit_abs = s
    else:
        def step(lo: int, hi: int):
            sel = idx[lo:hi]
            return coupled_flow_step_arrays(ens.x[sel], ens.v[sel], t, dt, u, g, tol_exit)

        parts = chunked_map(step, idx.size, threads=threads, deterministic=True)
        X = np.concatenate([p[0] for p in parts])
        V = np.concatenate([p[1] for p in parts])
        s = np.concatenate([p[2] for p in parts])
        hit = np.isfinite(s)
        exit_abs = t + s

    ens.x[idx] = domain.wrap(X)
    ens.v[idx] = V
    if np.any(hit):
        dead = idx[hit]
        ens.alive[dead] = False
        ens.exit_time[dead] = exit_abs[hit]
        logger.debug("t=%.4f: %d particles absorbed", t_next, dead.size)
    ens.time = t_next
    return ens


# --- deposition -------------------------------------------------------------

def _cic_stencil(x: np.ndarray, grid: Grid, domain: Domain) -> Tuple[np.ndarray, np.ndarray]:
    Nx, Ny, Nz = grid
    h = np.array([domain.Lx / Nx, domain.Ly / Ny, domain.Zmax / Nz])
    f = x / h - 0.5
    base = np.floor(f).astype(np.int64)
    frac = f - base

    idx = np.empty((8, x.shape[0]), dtype=np.int64)
    wts = np.empty((8, x.shape[0]))
    corner = 0
    for di in (0, 1):
        wi = frac[:, 0] if di else 1.0 - frac[:, 0]
        ii = np.mod(base[:, 0] + di, Nx)
        for dj in (0, 1):
            wj = frac[:, 1] if dj else 1.0 - frac[:, 1]
            jj = np.mod(base[:, 1] + dj, Ny)
            for dk in (0, 1):
                wk = frac[:, 2] if dk else 1.0 - frac[:, 2]
                # vertical neighbours outside the slab fold back onto the boundary cell
                kk = np.clip(base[:, 2] + dk, 0, Nz - 1)
                idx[corner] = (ii * Ny + jj) * Nz + kk
                wts[corner] = wi * wj * wk
                corner += 1
    return idx, wts


def _accumulate(idx: np.ndarray, wts: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(idx.ravel(), weights=(wts * values[None, :]).ravel(), minlength=size)


def deposit_moments(ens: ParticleEnsemble, grid: Grid, domain: Domain, orders: Iterable[float] = (),
                    threads: int = 1, deterministic: bool = True) -> MomentField:
    """Cloud-in-cell deposition of ρ_f, j_f and m_α of the alive particles."""
    grid = tuple(int(n) for n in grid)
    size = grid[0] * grid[1] * grid[2]
    cell_volume = domain.area * domain.Zmax / size
    orders = [float(a) for a in orders if a != 0]
    alive = np.flatnonzero(ens.alive)

    def chunk(lo: int, hi: int) -> np.ndarray:
        sel = alive[lo:hi]
        out = np.zeros((4 + len(orders), size))
        if sel.size == 0:
            return out
        idx, wts = _cic_stencil(ens.x[sel], grid, domain)
        w = ens.weight[sel]
        v = ens.v[sel]
        out[0] = _accumulate(idx, wts, w, size)
        for c in range(3):
            out[1 + c] = _accumulate(idx, wts, w * v[:, c], size)
        if orders:
            speed = np.linalg.norm(v, axis=1)
            for k, alpha in enumerate(orders):
                out[4 + k] = _accumulate(idx, wts, w * speed ** alpha, size)
        return out

    parts = chunked_map(chunk, alive.size, threads=threads, deterministic=deterministic)
    total = np.zeros((4 + len(orders), size))
    for p in parts:
        total += p
    total /= cell_volume

    rho = total[0].reshape(grid)
    j = np.stack([total[1 + c].reshape(grid) for c in range(3)], axis=-1)
    higher = {alpha: total[4 + k].reshape(grid) for k, alpha in enumerate(orders)}
    return MomentField(rho=rho, j=j, higher=higher, cell_volume=cell_volume, time=ens.time)


def relative_moment_deposit(ens: ParticleEnsemble, u_cells: np.ndarray, p: float, domain: Domain) -> np.ndarray:
    """Cell field of Σ a_ic·|v_i − u_c|^p / |cell| with the same CIC weights a_ic."""
    grid = tuple(u_cells.shape[:3])
    size = grid[0] * grid[1] * grid[2]
    cell_volume = domain.area * domain.Zmax / size
    alive = np.flatnonzero(ens.alive)
    if alive.size == 0:
        return np.zeros(grid)
    idx, wts = _cic_stencil(ens.x[alive], grid, domain)
    flat_u = u_cells.reshape(size, 3)
    w = ens.weight[alive]
    v = ens.v[alive]
    out = np.zeros(size)
    for corner in range(8):
        rel = np.linalg.norm(v - flat_u[idx[corner]], axis=1) ** p
        out += np.bincount(idx[corner], weights=wts[corner] * w * rel, minlength=size)
    return (out / cell_volume).reshape(grid)


# --- decay functionals ------------------------------------------------------

@dataclass(frozen=True)
class DecayFunctionals:
    N_q: float
    K_qr: float
    H_qm: float
    F_qmr: float


def _sup_ratio(p: float, p0: float, upper: float) -> float:
    """sup over [0, upper] of (1+s^p)/(1+s^p0)."""
    if math.isinf(upper):
        if p > p0:
            return math.inf
        upper = 1e6
    fn = lambda s: (1.0 + s ** p) / (1.0 + s ** p0)
    grid = np.concatenate([np.linspace(0.0, min(upper, 10.0), 2001), [upper]])
    values = fn(grid)
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda s: -fn(s), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        return float(max(values.max(), -res.fun))
    return float(values.max())


def _velocity_integral(spec: InitialDataSpec, q: float) -> float:
    """∫ (1+|v|^q)·(velocity profile of f0) dv."""
    if spec.family == "box":
        return FOUR_PI * (spec.R ** 3 / 3.0 + spec.R ** (q + 3.0) / (q + 3.0))
    if math.isinf(spec.Rmax) and spec.q - q <= 3.0:
        raise DivergentFunctional(f"velocity integral diverges: need q0 - q > 3, got q0={spec.q}, q={q}")
    value, _ = integrate.quad(lambda r: r * r * (1.0 + r ** q) / (1.0 + r ** spec.q), 0.0, spec.Rmax, limit=200)
    return FOUR_PI * value


def _vertical_norm(spec: InitialDataSpec, m: float, r: float) -> float:
    """‖(1+x3^m)·(vertical profile)‖ in L^r over the cell × (0, ∞)."""
    if spec.family == "box":
        prof = lambda z: 1.0 + z ** m
        top = spec.L
    else:
        prof = lambda z: (1.0 + z ** m) / (1.0 + z ** spec.m)
        top = spec.Lmax
    if math.isinf(r):
        if spec.family == "box":
            return 1.0 + top ** m
        return _sup_ratio(m, spec.m, top)
    value, _ = integrate.quad(lambda z: prof(z) ** r, 0.0, top, limit=200)
    return (spec.area * value) ** (1.0 / r)


def _vertical_plain_norm(spec: InitialDataSpec, r: float) -> float:
    if math.isinf(r):
        return 1.0
    if spec.family == "box":
        return (spec.area * spec.L) ** (1.0 / r)
    value, _ = integrate.quad(lambda z: (1.0 + z ** spec.m) ** (-r), 0.0, spec.Lmax, limit=200)
    return (spec.area * value) ** (1.0 / r)


def _velocity_sup(spec: InitialDataSpec, q: float) -> float:
    if spec.family == "box":
        return 1.0 + spec.R ** q
    value = _sup_ratio(q, spec.q, spec.Rmax)
    if math.isinf(value):
        raise DivergentFunctional(f"N_q is infinite for q={q} > q0={spec.q} with unbounded velocities")
    return value


def n_q(spec: InitialDataSpec, q: float) -> float:
    if spec.c == 0:
        return 0.0
    return spec.c * _velocity_sup(spec, q)


def k_qr(spec: InitialDataSpec, q: float, r: float) -> float:
    if spec.c == 0:
        return 0.0
    return spec.c * _velocity_sup(spec, q) * _vertical_plain_norm(spec, r)


def h_qm(spec: InitialDataSpec, q: float, m: float) -> float:
    if spec.c == 0:
        return 0.0
    return spec.c * _vertical_norm(spec, m, math.inf) * _velocity_integral(spec, q)


def f_qmr(spec: InitialDataSpec, q: float, m: float, r: float) -> float:
    if spec.c == 0:
        return 0.0
    return spec.c * _vertical_norm(spec, m, r) * _velocity_integral(spec, q)


def decay_functionals(spec: InitialDataSpec, q: float, m: float, r: float) -> DecayFunctionals:
    """(N_q, K_{q,r}, H_{q,m}, F_{q,m,r}) of f0; closed form for box data, quadrature otherwise."""
    return DecayFunctionals(
        N_q=n_q(spec, q),
        K_qr=k_qr(spec, q, r),
        H_qm=h_qm(spec, q, m),
        F_qmr=f_qmr(spec, q, m, r),
    )


# --- bounds evaluated as diagnostics ----------------------------------------

def measured_nq(ens: ParticleEnsemble, q: float, t: Optional[float] = None) -> float:
    """sup over alive particles of (1+|v|^q)·e^{3t}f0(z0)."""
    if ens.alive_count == 0:
        return 0.0
    speed = np.linalg.norm(ens.v[ens.alive], axis=1)
    return float(np.max((1.0 + speed ** q) * ens.pointwise_values(t)))


def nq_propagation_constant(q: float) -> float:
    # (1+(a+b+c)^q) <= 3^{q-1}(1+a^q)(1+b^q+c^q) for q >= 1
    return max(1.0, 3.0 ** (q - 1.0))


def propagated_nq_bound(nq0: float, t: float, q: float, g: float, u_budget: float,
                        constant: Optional[float] = None) -> float:
    """Right side of N_q(f(t)) ≤ C·e^{3t}(1 + |G|^q + ‖u‖_{L¹L^∞}^q)·N_q(f0)."""
    if constant is None:
        constant = nq_propagation_constant(q)
    return constant * math.exp(3.0 * t) * (1.0 + g ** q + u_budget ** q) * nq0


def moment_growth_envelope(alpha: float, t: float, m_alpha0: float, int_m_alpha_minus_1: float,
                           f0_sup: float, int_u_norm: float, g: float, constant: float = 1.0) -> float:
    """([M_α f0 + αg∫M_{α−1}]^{1/(α+3)} + C·e^{3t/(α+3)}‖f0‖_∞^{1/(α+3)}∫‖u‖_{L^{α+3}})^{α+3}."""
    p = alpha + 3.0
    base = (m_alpha0 + alpha * g * int_m_alpha_minus_1) ** (1.0 / p)
    field_term = constant * math.exp(3.0 * t / p) * f0_sup ** (1.0 / p) * int_u_norm
    return (base + field_term) ** p


def max_principle_holds(ens: ParticleEnsemble, f0_sup: float, t: Optional[float] = None) -> bool:
    t = ens.time if t is None else t
    if ens.alive_count == 0:
        return True
    return bool(np.max(ens.pointwise_values(t)) <= math.exp(3.0 * t) * f0_sup * (1.0 + 1e-12))
