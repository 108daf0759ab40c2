"""Incompressible Navier–Stokes on the periodic slab T² × (0, Zmax).

Staggered (MAC) layout, cell size (hx, hy, hz):

    u1[i, j, k]  at (i·hx,      (j+½)·hy, (k+½)·hz)
    u2[i, j, k]  at ((i+½)·hx,  j·hy,     (k+½)·hz)
    u3[i, j, k]  at ((i+½)·hx,  (j+½)·hy, k·hz),  k = 0..Nz, wall faces held at 0
    p[i, j, k]   at the cell centre

No-slip walls at z = 0 and z = Zmax. A step is explicit divergence-form
advection, Crank–Nicolson diffusion and a projection whose Poisson solve
is an FFT in (x, y) followed by one tridiagonal solve per horizontal mode.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft, integrate, linalg

from app.core.errors import (CflViolation, FieldHistoryUnavailable,
                             GridMismatch, SolverDivergence)
from app.core.phase import Domain, ParticleEnsemble
from app.physics.fields import VelocitySampler
from app.physics.kinetic import Grid, MomentField
from app.physics.series import DiagnosticsSeries, decay_envelope_check, fit_decay

logger = logging.getLogger(__name__)

CFL_LIMIT = 0.5


def _spacing(grid: Grid, domain: Domain) -> Tuple[float, float, float]:
    return domain.Lx / grid[0], domain.Ly / grid[1], domain.Zmax / grid[2]


def _roll(a: np.ndarray, shift: int, axis: int) -> np.ndarray:
    return np.roll(a, shift, axis=axis)


@dataclass
class FluidField:
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    p: np.ndarray
    time: float
    domain: Domain

    def __post_init__(self) -> None:
        shape = self.u1.shape
        if self.u2.shape != shape or self.p.shape != shape or self.u3.shape != shape[:2] + (shape[2] + 1,):
            raise GridMismatch(
                f"Inconsistent MAC arrays: u1{self.u1.shape} u2{self.u2.shape} u3{self.u3.shape} p{self.p.shape}"
            )

    # --- construction -------------------------------------------------------

    @classmethod
    def zeros(cls, grid: Grid, domain: Domain, time: float = 0.0) -> "FluidField":
        Nx, Ny, Nz = (int(n) for n in grid)
        return cls(
            u1=np.zeros((Nx, Ny, Nz)), u2=np.zeros((Nx, Ny, Nz)), u3=np.zeros((Nx, Ny, Nz + 1)),
            p=np.zeros((Nx, Ny, Nz)), time=float(time), domain=domain,
        )

    @classmethod
    def shear_mode(cls, amplitude: float, grid: Grid, domain: Domain, time: float = 0.0) -> "FluidField":
        """u = (A·sin(πz/Zmax), 0, 0): divergence-free, zero on both walls, lowest vertical mode."""
        out = cls.zeros(grid, domain, time)
        zc = (np.arange(out.grid[2]) + 0.5) * out.spacing[2]
        out.u1[:] = amplitude * np.sin(np.pi * zc / domain.Zmax)[None, None, :]
        return out

    @classmethod
    def from_sampler(cls, sampler: VelocitySampler, t: float, grid: Grid, domain: Domain) -> "FluidField":
        out = cls.zeros(grid, domain, t)
        for comp, target in enumerate((out.u1, out.u2, out.u3)):
            pts = out.face_positions(comp)
            values = sampler(t, pts.reshape(-1, 3))[:, comp]
            target[:] = values.reshape(target.shape)
        out.u3[..., 0] = 0.0
        out.u3[..., -1] = 0.0
        return out

    def copy(self) -> "FluidField":
        return FluidField(u1=self.u1.copy(), u2=self.u2.copy(), u3=self.u3.copy(), p=self.p.copy(),
                          time=self.time, domain=self.domain)

    # --- geometry -----------------------------------------------------------

    @property
    def grid(self) -> Grid:
        return tuple(int(n) for n in self.u1.shape)

    @property
    def spacing(self) -> Tuple[float, float, float]:
        return _spacing(self.grid, self.domain)

    @property
    def cell_volume(self) -> float:
        hx, hy, hz = self.spacing
        return hx * hy * hz

    def face_positions(self, comp: int) -> np.ndarray:
        Nx, Ny, Nz = self.grid
        hx, hy, hz = self.spacing
        xs = (np.arange(Nx) + (0.0 if comp == 0 else 0.5)) * hx
        ys = (np.arange(Ny) + (0.0 if comp == 1 else 0.5)) * hy
        zs = np.arange(Nz + 1) * hz if comp == 2 else (np.arange(Nz) + 0.5) * hz
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    # --- derived fields -----------------------------------------------------

    def cell_velocity(self) -> np.ndarray:
        c1 = 0.5 * (self.u1 + _roll(self.u1, -1, 0))
        c2 = 0.5 * (self.u2 + _roll(self.u2, -1, 1))
        c3 = 0.5 * (self.u3[..., :-1] + self.u3[..., 1:])
        return np.stack([c1, c2, c3], axis=-1)

    def divergence(self) -> np.ndarray:
        hx, hy, hz = self.spacing
        return ((_roll(self.u1, -1, 0) - self.u1) / hx
                + (_roll(self.u2, -1, 1) - self.u2) / hy
                + (self.u3[..., 1:] - self.u3[..., :-1]) / hz)

    def div_max(self) -> float:
        return float(np.max(np.abs(self.divergence())))

    def face_max(self) -> float:
        return float(max(np.max(np.abs(self.u1)), np.max(np.abs(self.u2)), np.max(np.abs(self.u3))))

    def l2_norm_sq(self) -> float:
        return self.cell_volume * float(np.sum(self.u1 ** 2) + np.sum(self.u2 ** 2) + np.sum(self.u3[..., 1:-1] ** 2))

    def energy(self) -> float:
        return 0.5 * self.l2_norm_sq()

    def grad_l2_sq(self) -> float:
        """‖∇u‖² in the form matching the discrete Laplacian, so ⟨−Δu, u⟩ = ‖∇u‖²."""
        hx, hy, hz = self.spacing
        total = 0.0
        for u in (self.u1, self.u2):
            total += np.sum(((_roll(u, -1, 0) - u) / hx) ** 2)
            total += np.sum(((_roll(u, -1, 1) - u) / hy) ** 2)
            total += np.sum((np.diff(u, axis=2) / hz) ** 2)
            total += 2.0 * np.sum((u[..., 0] / hz) ** 2) + 2.0 * np.sum((u[..., -1] / hz) ** 2)
        w = self.u3[..., 1:-1]
        total += np.sum(((_roll(w, -1, 0) - w) / hx) ** 2)
        total += np.sum(((_roll(w, -1, 1) - w) / hy) ** 2)
        total += np.sum((np.diff(self.u3, axis=2) / hz) ** 2)
        return self.cell_volume * float(total)

    def cell_gradient(self) -> np.ndarray:
        """∇u at cell centres, shape (Nx, Ny, Nz, 3, 3), entry [..., a, b] = ∂_b u_a."""
        hx, hy, hz = self.spacing
        c = self.cell_velocity()
        Nz = self.grid[2]
        grad = np.empty(c.shape + (3,))
        grad[..., 0] = (_roll(c, -1, 0) - _roll(c, 1, 0)) / (2.0 * hx)
        grad[..., 1] = (_roll(c, -1, 1) - _roll(c, 1, 1)) / (2.0 * hy)
        zc = np.concatenate([[0.0], (np.arange(Nz) + 0.5) * hz, [self.domain.Zmax]])
        padded = np.zeros(c.shape[:2] + (Nz + 2, 3))
        padded[:, :, 1:-1] = c
        grad[..., 2] = np.gradient(padded, zc, axis=2)[:, :, 1:-1]
        return grad

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.cell_velocity(), axis=-1)))

    def grad_sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.cell_gradient(), ord=2, axis=(-2, -1))))

    def d2_norm(self, p: float) -> float:
        """‖D²u‖_{L^p} of the cell-centred field by repeated central differences."""
        hx, hy, hz = self.spacing
        grad = self.cell_gradient()
        total = np.zeros(grad.shape[:3])
        for axis, h in ((0, hx), (1, hy)):
            second = (_roll(grad, -1, axis) - _roll(grad, 1, axis)) / (2.0 * h)
            total += np.sum(np.abs(second) ** p, axis=(-2, -1))
        second_z = np.gradient(grad, hz, axis=2)
        total += np.sum(np.abs(second_z) ** p, axis=(-2, -1))
        return float((np.sum(total) * self.cell_volume) ** (1.0 / p))


@dataclass(frozen=True)
class BrinkmanSource:
    """Cell-centred force density F = j_f − ρ_f·u, shape (Nx, Ny, Nz, 3)."""

    F: np.ndarray
    time: float = 0.0
    cell_volume: float = 1.0

    @classmethod
    def zeros(cls, grid: Grid, domain: Domain, time: float = 0.0) -> "BrinkmanSource":
        vol = domain.area * domain.Zmax / (grid[0] * grid[1] * grid[2])
        return cls(F=np.zeros(tuple(grid) + (3,)), time=time, cell_volume=vol)

    def lp_norm(self, p: float) -> float:
        mag = np.linalg.norm(self.F, axis=-1)
        if math.isinf(p):
            return float(np.max(mag)) if mag.size else 0.0
        return float((np.sum(mag ** p) * self.cell_volume) ** (1.0 / p))

    def work(self, field: FluidField) -> float:
        return float(np.sum(self.F * field.cell_velocity()) * self.cell_volume)


def build_brinkman(moments: MomentField, field: FluidField, time_tol: float = 1e-9) -> BrinkmanSource:
    if moments.grid != field.grid:
        raise GridMismatch(f"Moments on grid {moments.grid}, fluid on {field.grid}")
    if abs(moments.time - field.time) > time_tol * max(1.0, abs(field.time)):
        raise GridMismatch(f"Moments at t={moments.time}, fluid at t={field.time}")
    F = moments.j - moments.rho[..., None] * field.cell_velocity()
    return BrinkmanSource(F=F, time=field.time, cell_volume=moments.cell_volume)


# --- linear algebra ----------------------------------------------------------

def _tridiagonal_solve(lower, diag, upper, rhs: np.ndarray, what: str) -> np.ndarray:
    n = rhs.shape[-1]
    batch = rhs.shape[:-1]
    diag = np.broadcast_to(diag, rhs.shape)
    lower = np.broadcast_to(lower, batch + (n - 1,))
    upper = np.broadcast_to(upper, batch + (n - 1,))
    dtype = np.result_type(diag, rhs, upper)
    out = np.empty(rhs.shape, dtype=dtype)
    ab = np.zeros((3, n), dtype=dtype)
    for idx in np.ndindex(*batch):
        ab[0, 1:] = upper[idx]
        ab[1] = diag[idx]
        ab[2, :-1] = lower[idx]
        try:
            out[idx] = linalg.solve_banded((1, 1), ab, rhs[idx], check_finite=False)
        except linalg.LinAlgError as exc:
            raise SolverDivergence(f"Tridiagonal {what} solve failed for mode {idx}: {exc}") from exc
    return out


def _horizontal_eigenvalues(grid: Grid, hx: float, hy: float) -> np.ndarray:
    kx = np.arange(grid[0])
    ky = np.arange(grid[1])
    lx = -4.0 / hx ** 2 * np.sin(np.pi * kx / grid[0]) ** 2
    ly = -4.0 / hy ** 2 * np.sin(np.pi * ky / grid[1]) ** 2
    return lx[:, None] + ly[None, :]


def _dirichlet_cell_diag(n: int, hz: float) -> np.ndarray:
    # ghost value −u at each wall puts the wall face exactly on zero
    d = np.full(n, -2.0 / hz ** 2)
    d[0] = d[-1] = -3.0 / hz ** 2
    return d


def _neumann_cell_diag(n: int, hz: float) -> np.ndarray:
    d = np.full(n, -2.0 / hz ** 2)
    d[0] = d[-1] = -1.0 / hz ** 2
    return d


def _check_solution(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise SolverDivergence(f"Tridiagonal {what} solve produced non-finite values.")
    return values


def _helmholtz_solve(rhs: np.ndarray, coef: float, z_diag: np.ndarray, hz: float,
                     horiz: np.ndarray) -> np.ndarray:
    """Solve (I − coef·Δ)X = rhs with Δ = horizontal FFT part + vertical tridiagonal part."""
    hat = fft.fft2(rhs, axes=(0, 1))
    off = np.full(z_diag.size - 1, -coef / hz ** 2)
    diag = 1.0 - coef * (horiz[:, :, None] + z_diag[None, None, :])
    sol = _tridiagonal_solve(off, diag, off, hat, "diffusion")
    return _check_solution(np.real(fft.ifft2(sol, axes=(0, 1))), "diffusion")


def _poisson_neumann(rhs: np.ndarray, hz: float, horiz: np.ndarray) -> np.ndarray:
    """Δφ = rhs with periodic x, y and zero normal derivative at both walls; mean mode pinned."""
    Nz = rhs.shape[2]
    hat = fft.fft2(rhs, axes=(0, 1))
    diag = horiz[:, :, None] + _neumann_cell_diag(Nz, hz)[None, None, :]
    diag = diag.astype(np.complex128)
    upper = np.full(rhs.shape[:2] + (Nz - 1,), 1.0 / hz ** 2)
    lower = np.full(rhs.shape[:2] + (Nz - 1,), 1.0 / hz ** 2)
    diag[0, 0, 0] = 1.0
    upper[0, 0, 0] = 0.0
    hat[0, 0, 0] = 0.0
    sol = _tridiagonal_solve(lower, diag, upper, hat, "pressure")
    return _check_solution(np.real(fft.ifft2(sol, axes=(0, 1))), "pressure")


def _laplacian_cells(u: np.ndarray, hx: float, hy: float, hz: float) -> np.ndarray:
    out = (_roll(u, -1, 0) - 2.0 * u + _roll(u, 1, 0)) / hx ** 2
    out += (_roll(u, -1, 1) - 2.0 * u + _roll(u, 1, 1)) / hy ** 2
    zz = np.empty_like(u)
    zz[..., 1:-1] = u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]
    zz[..., 0] = u[..., 1] - 3.0 * u[..., 0]
    zz[..., -1] = u[..., -2] - 3.0 * u[..., -1]
    return out + zz / hz ** 2


def _laplacian_faces(u3: np.ndarray, hx: float, hy: float, hz: float) -> np.ndarray:
    w = u3[..., 1:-1]
    out = (_roll(w, -1, 0) - 2.0 * w + _roll(w, 1, 0)) / hx ** 2
    out += (_roll(w, -1, 1) - 2.0 * w + _roll(w, 1, 1)) / hy ** 2
    out += (u3[..., 2:] - 2.0 * w + u3[..., :-2]) / hz ** 2
    return out


def _advection(field: FluidField) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """∇·(u⊗u) on the staggered grid; returns terms for u1, u2 and the interior u3 faces."""
    u1, u2, u3 = field.u1, field.u2, field.u3
    hx, hy, hz = field.spacing
    Nz = field.grid[2]

    # vertical face averages of the horizontal components, zero on the walls
    u1z = np.zeros(u3.shape)
    u1z[..., 1:-1] = 0.5 * (u1[..., :-1] + u1[..., 1:])
    u2z = np.zeros(u3.shape)
    u2z[..., 1:-1] = 0.5 * (u2[..., :-1] + u2[..., 1:])

    c11 = (0.5 * (u1 + _roll(u1, -1, 0))) ** 2
    c22 = (0.5 * (u2 + _roll(u2, -1, 1))) ** 2
    c33 = (0.5 * (u3[..., :-1] + u3[..., 1:])) ** 2
    e12 = 0.5 * (_roll(u2, 1, 0) + u2) * 0.5 * (_roll(u1, 1, 1) + u1)
    e13 = 0.5 * (_roll(u3, 1, 0) + u3) * u1z
    e23 = 0.5 * (_roll(u3, 1, 1) + u3) * u2z

    adv1 = ((c11 - _roll(c11, 1, 0)) / hx
            + (_roll(e12, -1, 1) - e12) / hy
            + (e13[..., 1:] - e13[..., :-1]) / hz)
    adv2 = ((_roll(e12, -1, 0) - e12) / hx
            + (c22 - _roll(c22, 1, 1)) / hy
            + (e23[..., 1:] - e23[..., :-1]) / hz)
    adv3 = ((_roll(e13, -1, 0) - e13)[..., 1:Nz] / hx
            + (_roll(e23, -1, 1) - e23)[..., 1:Nz] / hy
            + (c33[..., 1:] - c33[..., :-1]) / hz)
    return adv1, adv2, adv3


def _force_on_faces(F: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    f1 = 0.5 * (_roll(F[..., 0], 1, 0) + F[..., 0])
    f2 = 0.5 * (_roll(F[..., 1], 1, 1) + F[..., 1])
    f3 = 0.5 * (F[..., :-1, 2] + F[..., 1:, 2])
    return f1, f2, f3


def cfl_number(field: FluidField, dt: float) -> float:
    hx, hy, hz = field.spacing
    return dt * max(np.max(np.abs(field.u1)) / hx, np.max(np.abs(field.u2)) / hy, np.max(np.abs(field.u3)) / hz)


def ns_step(field: FluidField, F=None, dt: float = 1e-2, viscosity: float = 1.0,
            tol_div: float = 1e-8) -> FluidField:
    """Advance one step; returns a new field and leaves ``field`` untouched."""
    cfl = cfl_number(field, dt)
    if cfl > CFL_LIMIT:
        raise CflViolation(f"CFL number {cfl:.3g} exceeds {CFL_LIMIT} at t={field.time:.4g} (dt={dt})")
    hx, hy, hz = field.spacing
    Nz = field.grid[2]
    force = F.F if isinstance(F, BrinkmanSource) else F

    a1, a2, a3 = _advection(field)
    r1, r2, r3 = -a1, -a2, -a3
    if force is not None:
        if force.shape[:3] != field.grid:
            raise GridMismatch(f"Force on grid {force.shape[:3]}, fluid on {field.grid}")
        f1, f2, f3 = _force_on_faces(force)
        r1, r2, r3 = r1 + f1, r2 + f2, r3 + f3

    coef = 0.5 * viscosity * dt
    horiz = _horizontal_eigenvalues(field.grid, hx, hy)
    cell_diag = _dirichlet_cell_diag(Nz, hz)
    face_diag = np.full(Nz - 1, -2.0 / hz ** 2)

    rhs1 = field.u1 + dt * r1 + coef * _laplacian_cells(field.u1, hx, hy, hz)
    rhs2 = field.u2 + dt * r2 + coef * _laplacian_cells(field.u2, hx, hy, hz)
    rhs3 = field.u3[..., 1:-1] + dt * r3 + coef * _laplacian_faces(field.u3, hx, hy, hz)
    s1 = _helmholtz_solve(rhs1, coef, cell_diag, hz, horiz)
    s2 = _helmholtz_solve(rhs2, coef, cell_diag, hz, horiz)
    s3 = np.zeros(field.u3.shape)
    s3[..., 1:-1] = _helmholtz_solve(rhs3, coef, face_diag, hz, horiz)

    star = FluidField(u1=s1, u2=s2, u3=s3, p=field.p, time=field.time, domain=field.domain)
    phi = _poisson_neumann(star.divergence(), hz, horiz)
    u1 = s1 - (phi - _roll(phi, 1, 0)) / hx
    u2 = s2 - (phi - _roll(phi, 1, 1)) / hy
    u3 = s3.copy()
    u3[..., 1:-1] -= (phi[..., 1:] - phi[..., :-1]) / hz

    out = FluidField(u1=u1, u2=u2, u3=u3, p=phi / dt, time=field.time + dt, domain=field.domain)
    div = out.div_max()
    scale = out.face_max() / min(hx, hy, hz)
    if div > tol_div * scale + 1e-300:
        raise SolverDivergence(f"max|div u| = {div:.3g} after projection at t={out.time:.4g}")
    return out


# --- energy balance ----------------------------------------------------------

@dataclass(frozen=True)
class BudgetReport:
    s: float
    t: float
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs


def energy_budget(fields: Sequence[FluidField], forces: Optional[Sequence[Optional[BrinkmanSource]]] = None,
                  viscosity: float = 1.0) -> BudgetReport:
    """Both sides of ‖u(t)‖² + 2ν∫‖∇u‖² ≤ ‖u(s)‖² + 2∫⟨F, u⟩ over the stored fields (trapezoid in time)."""
    if not fields:
        return BudgetReport(s=0.0, t=0.0, lhs=0.0, rhs=0.0)
    times = np.array([f.time for f in fields])
    grads = np.array([f.grad_l2_sq() for f in fields])
    if forces is None:
        work = np.zeros(len(fields))
    else:
        work = np.array([0.0 if F is None else F.work(f) for f, F in zip(fields, forces)])
    dissipated = float(integrate.trapezoid(grads, times)) if len(fields) > 1 else 0.0
    supplied = float(integrate.trapezoid(work, times)) if len(fields) > 1 else 0.0
    lhs = fields[-1].l2_norm_sq() + 2.0 * viscosity * dissipated
    rhs = fields[0].l2_norm_sq() + 2.0 * supplied
    return BudgetReport(s=float(times[0]), t=float(times[-1]), lhs=lhs, rhs=rhs)


# --- sampling the grid field -------------------------------------------------

def _trilinear(values: np.ndarray, pts: np.ndarray, hx: float, hy: float,
               offsets: Tuple[float, float], zc: np.ndarray) -> np.ndarray:
    Nx, Ny, _ = values.shape
    fx = pts[:, 0] / hx - offsets[0]
    fy = pts[:, 1] / hy - offsets[1]
    i0 = np.floor(fx).astype(np.int64)
    j0 = np.floor(fy).astype(np.int64)
    wx = fx - i0
    wy = fy - j0
    k1 = np.clip(np.searchsorted(zc, pts[:, 2], side="right"), 1, zc.size - 1)
    k0 = k1 - 1
    wz = np.clip((pts[:, 2] - zc[k0]) / (zc[k1] - zc[k0]), 0.0, 1.0)
    out = np.zeros(pts.shape[0])
    for di, cx in ((0, 1.0 - wx), (1, wx)):
        ii = np.mod(i0 + di, Nx)
        for dj, cy in ((0, 1.0 - wy), (1, wy)):
            jj = np.mod(j0 + dj, Ny)
            out += cx * cy * ((1.0 - wz) * values[ii, jj, k0] + wz * values[ii, jj, k1])
    return out


class _StaggeredInterpolant:
    def __init__(self, field: FluidField) -> None:
        self.field = field
        Nz = field.grid[2]
        hx, hy, hz = field.spacing
        self.hx, self.hy = hx, hy
        zc_cell = np.concatenate([[0.0], (np.arange(Nz) + 0.5) * hz, [field.domain.Zmax]])
        zc_face = np.arange(Nz + 1) * hz

        def pad(u):
            out = np.zeros(u.shape[:2] + (Nz + 2,))
            out[:, :, 1:-1] = u
            return out

        self.parts = (
            (pad(field.u1), (0.0, 0.5), zc_cell),
            (pad(field.u2), (0.5, 0.0), zc_cell),
            (field.u3, (0.5, 0.5), zc_face),
        )
        self.sup = field.sup_norm()
        self.grad_sup = field.grad_sup_norm()

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.column_stack([_trilinear(v, pts, self.hx, self.hy, off, zc) for v, off, zc in self.parts])


class GridFieldSampler(VelocitySampler):
    def __init__(self, field: FluidField) -> None:
        self.interp = _StaggeredInterpolant(field)
        self.delta = 0.25 * min(field.spacing)

    def _interior(self, t: float, pts: np.ndarray) -> np.ndarray:
        return self.interp(pts)

    def _interior_gradient(self, t: float, pts: np.ndarray) -> np.ndarray:
        out = np.empty((pts.shape[0], 3, 3))
        for b in range(3):
            step = np.zeros(3)
            step[b] = self.delta
            out[:, :, b] = (self._interior(t, pts + step) - self._interior(t, pts - step)) / (2.0 * self.delta)
        return out

    def sup_norm(self, t: float) -> float:
        return self.interp.sup

    def grad_sup_norm(self, t: float) -> float:
        return self.interp.grad_sup


class FieldHistory:
    def __init__(self, capacity: int = 256) -> None:
        if capacity < 2:
            raise ValueError("FieldHistory needs room for at least two snapshots.")
        self.capacity = int(capacity)
        self._items: Deque[_StaggeredInterpolant] = deque(maxlen=self.capacity)

    def push(self, field: FluidField) -> None:
        if self._items and field.time <= self._items[-1].field.time:
            raise ValueError(f"Snapshots must arrive in time order (got t={field.time} after "
                             f"t={self._items[-1].field.time})")
        self._items.append(_StaggeredInterpolant(field.copy()))

    def __len__(self) -> int:
        return len(self._items)

    @property
    def times(self) -> np.ndarray:
        return np.array([item.field.time for item in self._items])

    @property
    def window(self) -> Tuple[float, float]:
        if not self._items:
            return (math.nan, math.nan)
        return self._items[0].field.time, self._items[-1].field.time

    def sampler(self) -> "HistorySampler":
        return HistorySampler(self)


class HistorySampler(VelocitySampler):
    def __init__(self, history: FieldHistory) -> None:
        self.history = history
        first = history._items[0].field if len(history) else None
        self.delta = 0.25 * min(first.spacing) if first is not None else 1e-3

    def available(self, t: float) -> None:
        lo, hi = self.history.window
        slack = 1e-9 * max(1.0, abs(t))
        if not len(self.history) or t < lo - slack or t > hi + slack:
            raise FieldHistoryUnavailable(f"Field at t={t:.6g} is outside the retained window [{lo:.6g}, {hi:.6g}]")

    def _bracket(self, t: float) -> Tuple[int, int, float]:
        self.available(t)
        times = self.history.times
        if times.size == 1:
            return 0, 0, 0.0
        k = int(np.clip(np.searchsorted(times, t, side="right"), 1, times.size - 1))
        w = float(np.clip((t - times[k - 1]) / (times[k] - times[k - 1]), 0.0, 1.0))
        return k - 1, k, w

    def _interior(self, t: float, pts: np.ndarray) -> np.ndarray:
        a, b, w = self._bracket(t)
        items = self.history._items
        if w == 0.0:
            return items[a](pts)
        return (1.0 - w) * items[a](pts) + w * items[b](pts)

    def _interior_gradient(self, t: float, pts: np.ndarray) -> np.ndarray:
        out = np.empty((pts.shape[0], 3, 3))
        for b in range(3):
            step = np.zeros(3)
            step[b] = self.delta
            out[:, :, b] = (self._interior(t, pts + step) - self._interior(t, pts - step)) / (2.0 * self.delta)
        return out

    def _norm_series(self, kind: str) -> np.ndarray:
        return np.array([item.sup if kind == "u" else item.grad_sup for item in self.history._items])

    def sup_norm(self, t: float) -> float:
        self.available(t)
        return float(np.interp(t, self.history.times, self._norm_series("u")))

    def grad_sup_norm(self, t: float) -> float:
        self.available(t)
        return float(np.interp(t, self.history.times, self._norm_series("grad")))

    def budget(self, t_lo: float, t_hi: float, kind: str = "u") -> float:
        if t_hi <= t_lo:
            return 0.0
        self.available(t_lo)
        self.available(t_hi)
        times = self.history.times
        inner = times[(times > t_lo) & (times < t_hi)]
        grid = np.concatenate([[t_lo], inner, [t_hi]])
        values = np.interp(grid, times, self._norm_series(kind))
        return float(integrate.trapezoid(values, grid))

    def weighted_budget(self, t: float) -> float:
        if t <= 0:
            return 0.0
        self.available(0.0)
        self.available(t)
        times = self.history.times
        grid = np.concatenate([[0.0], times[(times > 0.0) & (times < t)], [t]])
        values = np.exp(grid) * np.interp(grid, times, self._norm_series("u"))
        return float(integrate.trapezoid(values, grid))


# --- truncation monitor ------------------------------------------------------

@dataclass(frozen=True)
class TruncationFlags:
    time: float
    top_energy_share: float
    particles_near_top: int

    @property
    def flagged(self) -> bool:
        return self.top_energy_share > TruncationMonitor.ENERGY_SHARE or self.particles_near_top > 0


@dataclass
class TruncationMonitor:
    """Makes the artificial top wall visible: energy high in the slab, particles close to Zmax."""

    domain: Domain
    flagged_steps: int = 0
    history: List[TruncationFlags] = field(default_factory=list)

    ENERGY_SHARE = 0.01
    ENERGY_HEIGHT = 0.7
    PARTICLE_HEIGHT = 0.9

    def check(self, t: float, fluid: Optional[FluidField] = None,
              ens: Optional[ParticleEnsemble] = None) -> TruncationFlags:
        share = 0.0
        if fluid is not None:
            density = np.sum(fluid.cell_velocity() ** 2, axis=-1)
            total = float(np.sum(density))
            if total > 0:
                zc = (np.arange(fluid.grid[2]) + 0.5) * fluid.spacing[2]
                top = zc >= self.ENERGY_HEIGHT * self.domain.Zmax
                share = float(np.sum(density[..., top])) / total
        near = 0
        if ens is not None and ens.alive_count:
            near = int(np.count_nonzero(ens.x[ens.alive, 2] >= self.PARTICLE_HEIGHT * self.domain.Zmax))
        flags = TruncationFlags(time=t, top_energy_share=share, particles_near_top=near)
        if flags.flagged:
            self.flagged_steps += 1
            self.history.append(flags)
            logger.warning("Truncation at t=%.4g: top energy share %.3g, %d particles above %.1f·Zmax",
                           t, share, near, self.PARTICLE_HEIGHT)
        return flags


# --- conditional decay experiment -------------------------------------------

def _shear_force(amplitude: float, grid: Grid, domain: Domain) -> np.ndarray:
    F = np.zeros(tuple(grid) + (3,))
    zc = (np.arange(grid[2]) + 0.5) * domain.Zmax / grid[2]
    F[..., 0] = amplitude * np.sin(np.pi * zc / domain.Zmax)[None, None, :]
    return F


def decaying_force_experiment(C: float, exponent: float, t_end: float, grid: Grid = (4, 4, 16),
                              domain: Domain = Domain(1.0, 1.0, 1.0), dt: float = 1e-2,
                              viscosity: float = 1.0, u0_amplitude: float = 1e-2, sample_every: int = 10,
                              t_fit: float = 1.0, rate: float = 1.5, tol_div: float = 1e-8) -> DiagnosticsSeries:
    """Navier–Stokes alone, driven by a shear force with ‖F(t)‖₂ = C(1+t)^{−exponent}.

    The returned series carries ‖u‖₂, ‖u‖₂² and ‖F‖₂; ``meta`` holds the
    envelope Env = ‖u(t_fit)‖²(1+t_fit)^rate, whether ‖u(t)‖² ≤ Env(1+t)^{−rate}
    held at every sample, and the fitted decay exponent of ‖u‖².
    """
    field_ = FluidField.shear_mode(u0_amplitude, grid, domain)
    unit_norm = math.sqrt(domain.area * domain.Zmax / 2.0)
    steps = int(round(t_end / dt))
    series = DiagnosticsSeries.empty(("time", "u_L2", "u_L2_sq", "force_L2"))

    def record(f: FluidField) -> None:
        norm_sq = f.l2_norm_sq()
        series.append({"time": f.time, "u_L2": math.sqrt(norm_sq), "u_L2_sq": norm_sq,
                       "force_L2": C * (1.0 + f.time) ** (-exponent)})

    record(field_)
    for n in range(steps):
        strength = C * (1.0 + field_.time) ** (-exponent)
        force = _shear_force(strength / unit_norm, grid, domain) if C else None
        field_ = ns_step(field_, force, dt, viscosity, tol_div)
        if (n + 1) % sample_every == 0 or n + 1 == steps:
            record(field_)

    check = decay_envelope_check(series.times, series["u_L2_sq"], t_fit, rate)
    series.meta.update({
        "C": C, "exponent": exponent, "rate": rate, "t_fit": t_fit,
        "envelope": check.envelope,
        "envelope_holds": float(check.holds),
        "envelope_violations": float(check.violations),
    })
    values = series["u_L2_sq"]
    later = series.times >= t_fit
    if np.count_nonzero(later) >= 2 and np.all(values[later] > 0):
        fit = fit_decay(series, "u_L2_sq", (t_fit, float(series.times[-1])))
        series.meta["fitted_exponent"] = fit.exponent
    level = logging.INFO if check.holds else logging.WARNING
    logger.log(level, "Decaying force C=%g exponent=%g: envelope %s (%d violations)",
               C, exponent, "holds" if check.holds else "fails", check.violations)
    return series
