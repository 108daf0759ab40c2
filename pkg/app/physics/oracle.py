"""Slow, independent reference computations.

Nothing here reuses the solver kernels: characteristics are integrated with
classical RK4, integrals with 1-D rules built from scratch, roots with
brentq. Tests compute expected values here before asserting them elsewhere.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, linalg, optimize
from scipy.stats import qmc

from app.core.errors import DivergentIntegral
from app.core.phase import PhasePoint
from app.physics.characteristics import FlowResult
from app.physics.kinetic import InitialDataSpec

logger = logging.getLogger(__name__)

RULES = ("tensor_gauss", "adaptive_simpson", "monte_carlo")


@dataclass(frozen=True)
class QuadratureSpec:
    integrand: str = "moment"
    bounds: Tuple[float, float] = (0.0, 1.0)
    rule: str = "tensor_gauss"
    target_error: float = 1e-10

    def __post_init__(self) -> None:
        if not self.target_error > 0:
            raise ValueError(f"target_error must be positive, got {self.target_error}")
        if self.rule not in RULES:
            raise ValueError(f"Unknown rule '{self.rule}', expected one of {', '.join(RULES)}")


# --- characteristics ---------------------------------------------------------

def _rhs(t: float, x: np.ndarray, v: np.ndarray, u, g: float) -> Tuple[np.ndarray, np.ndarray]:
    accel = np.asarray(u(t, x), dtype=np.float64) + np.array([0.0, 0.0, -g]) - v
    return v, accel


def _rk4(t: float, x: np.ndarray, v: np.ndarray, h: float, u, g: float) -> Tuple[np.ndarray, np.ndarray]:
    k1x, k1v = _rhs(t, x, v, u, g)
    k2x, k2v = _rhs(t + h / 2, x + h / 2 * k1x, v + h / 2 * k1v, u, g)
    k3x, k3v = _rhs(t + h / 2, x + h / 2 * k2x, v + h / 2 * k2v, u, g)
    k4x, k4v = _rhs(t + h, x + h * k3x, v + h * k3v, u, g)
    return (x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


def ode_reference_flow(z: PhasePoint, t0: float, t1: float, u, g: float, dt_fine: float = 1e-4,
                       stop_at_wall: bool = True) -> FlowResult:
    """RK4 from t0 to t1 (backward when t1 < t0); the wall crossing is located by brentq on a partial step."""
    x = np.array(z.x, dtype=np.float64)
    v = np.array(z.v, dtype=np.float64)
    span = t1 - t0
    if span == 0:
        return FlowResult(X=x, V=v)
    n = max(1, int(math.ceil(abs(span) / dt_fine - 1e-12)))
    h = span / n
    t = t0
    for _ in range(n):
        X, V = _rk4(t, x, v, h, u, g)
        if stop_at_wall and h > 0 and X[2] <= 0.0 < x[2]:
            s = optimize.brentq(lambda s: _rk4(t, x, v, s, u, g)[0][2], 0.0, h, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            X, V = _rk4(t, x, v, s, u, g)
            return FlowResult(X=X, V=V, exited=True, exit_time=t + s)
        x, v = X, V
        t += h
    return FlowResult(X=x, V=v)


def gravity_exit_time_reference(x3: float, v3: float, g: float = 1.0, scan: float = 1e-3) -> float:
    if x3 <= 0:
        return 0.0

    def height(s: float) -> float:
        return x3 + (1.0 - math.exp(-s)) * v3 - g * (s - 1.0 + math.exp(-s))

    s = 0.0
    while True:
        nxt = s + scan
        if height(nxt) <= 0.0:
            return float(optimize.brentq(height, s, nxt, xtol=1e-15, rtol=4 * np.finfo(float).eps))
        s = nxt


def spatial_jacobian_min(t: float, v, u, g: float, points: Sequence[Sequence[float]],
                         dt_fine: float = 1e-3, h: float = 1e-5) -> float:
    """min over the given x of det D_x X(0; t, x, v), by central differences of RK4 backward flows."""
    v = np.asarray(v, dtype=np.float64)
    best = math.inf
    for x in np.asarray(points, dtype=np.float64).reshape(-1, 3):
        cols = []
        for b in range(3):
            step = np.zeros(3)
            step[b] = h
            plus = ode_reference_flow(PhasePoint(x + step, v), t, 0.0, u, g, dt_fine, stop_at_wall=False).X
            minus = ode_reference_flow(PhasePoint(x - step, v), t, 0.0, u, g, dt_fine, stop_at_wall=False).X
            cols.append((plus - minus) / (2.0 * h))
        best = min(best, float(np.linalg.det(np.column_stack(cols))))
    return best


# --- quadrature --------------------------------------------------------------

def _gauss(fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, target: float) -> float:
    previous = math.nan
    for n in (16, 32, 64, 128, 256, 512, 1024, 2048):
        nodes, weights = np.polynomial.legendre.leggauss(n)
        # composite on 8 panels so kinks of step profiles do not stall convergence
        edges = np.linspace(lo, hi, 9)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            total += half * float(np.sum(weights * fn(mid + half * nodes)))
        if abs(total - previous) <= target * max(1.0, abs(total)):
            return total
        previous = total
    return total


def _simpson(fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, target: float) -> float:
    previous = math.nan
    for k in range(6, 22):
        xs = np.linspace(lo, hi, 2 ** k + 1)
        total = float(integrate.simpson(fn(xs), x=xs))
        if abs(total - previous) <= target * max(1.0, abs(total)):
            return total
        previous = total
    return total


def _monte_carlo(fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, target: float) -> float:
    previous = math.nan
    for m in range(10, 22):
        pts = lo + (hi - lo) * qmc.Sobol(d=1, scramble=True, seed=0).random_base2(m)[:, 0]
        values = fn(pts)
        total = (hi - lo) * float(np.mean(values))
        if abs(total - previous) <= max(target, 1e-6) * max(1.0, abs(total)):
            return total
        previous = total
    return total


_RULE_FUNCS = {"tensor_gauss": _gauss, "adaptive_simpson": _simpson, "monte_carlo": _monte_carlo}


def integrate_1d(fn: Callable[[np.ndarray], np.ndarray], quad: QuadratureSpec) -> float:
    lo, hi = quad.bounds
    return _RULE_FUNCS[quad.rule](fn, lo, hi, quad.target_error)


def _radial_integrand(spec, alpha: float) -> Tuple[Callable[[np.ndarray], np.ndarray], Tuple[float, float]]:
    if spec.family == "box":
        return (lambda r: r ** (2.0 + alpha)), (0.0, spec.R)
    q = spec.q
    if math.isfinite(spec.Rmax):
        return (lambda r: r ** (2.0 + alpha) / (1.0 + r ** q)), (0.0, spec.Rmax)

    # r = s/(1−s) on (0, 1)
    def mapped(s):
        s = np.clip(s, 0.0, 1.0 - 1e-15)
        r = s / (1.0 - s)
        return r ** (2.0 + alpha) / (1.0 + r ** q) / (1.0 - s) ** 2
    return mapped, (0.0, 1.0)


def _vertical_integral(spec, quad: QuadratureSpec) -> float:
    if spec.family == "box":
        return spec.L
    m = spec.m
    return integrate_1d(lambda z: 1.0 / (1.0 + z ** m),
                        QuadratureSpec("vertical", (0.0, spec.Lmax), quad.rule, quad.target_error))


def moment_quadrature(spec, alpha: float, quad: Optional[QuadratureSpec] = None) -> float:
    """∫∫|v|^α f0 over the cell, as a product of a vertical and a radial 1-D rule."""
    quad = quad or QuadratureSpec()
    if spec.family == "poly_decay" and math.isinf(spec.Rmax) and alpha >= spec.q - 3.0:
        raise DivergentIntegral(f"|v|^{alpha} is not integrable against (1+|v|^{spec.q})^-1")
    area = spec.Lx * spec.Ly
    vertical = _vertical_integral(spec, quad)

    def radial(a: float) -> float:
        fn, bounds = _radial_integrand(spec, a)
        return 4.0 * math.pi * integrate_1d(fn, QuadratureSpec("radial", bounds, quad.rule, quad.target_error))

    shape_alpha = area * vertical * radial(alpha)
    if not spec.normalized:
        return spec.amplitude * shape_alpha
    return shape_alpha / (area * vertical * radial(0.0))


# --- velocity interpolation --------------------------------------------------

def interpolation_constant(k: float, ell: float, sharp: bool = False) -> float:
    """Constant C in m_ℓ ≤ C·‖h‖_∞^{(k−ℓ)/(k+3)}·M_k^{(ℓ+3)/(k+3)}.

    Default: minimum over the split radius R of (4π/(ℓ+3))R^{ℓ+3} + R^{ℓ−k},
    found by golden-section search. ``sharp`` returns the value attained by
    the indicator of a ball, which no profile exceeds.
    """
    if not 0 <= ell <= k:
        raise ValueError(f"need 0 <= l <= k, got l={ell}, k={k}")
    if ell == k:
        return 1.0
    a = 4.0 * math.pi / (ell + 3.0)
    if sharp:
        return a * (4.0 * math.pi / (k + 3.0)) ** (-(ell + 3.0) / (k + 3.0))

    def split(log_r: float) -> float:
        r = math.exp(log_r)
        return a * r ** (ell + 3.0) + r ** (ell - k)

    res = optimize.minimize_scalar(split, bracket=(-1.0, 1.0), method="golden", tol=1e-12)
    return float(res.fun)


def shell_profile_moments(radii: Sequence[float], values: Sequence[float], order: float) -> float:
    r = np.asarray(radii, dtype=np.float64)
    h = np.asarray(values, dtype=np.float64)
    p = order + 3.0
    return float(np.sum(h * 4.0 * math.pi * (r[1:] ** p - r[:-1] ** p) / p))


def interpolation_ratio(radii: Sequence[float], values: Sequence[float], k: float, ell: float,
                        sharp: bool = False) -> float:
    """m_ℓ / (C·‖h‖_∞^{(k−ℓ)/(k+3)}·M_k^{(ℓ+3)/(k+3)}) for a radial shell profile; at most 1."""
    sup = float(np.max(np.abs(values)))
    m_ell = shell_profile_moments(radii, values, ell)
    M_k = shell_profile_moments(radii, values, k)
    C = interpolation_constant(k, ell, sharp)
    bound = C * sup ** ((k - ell) / (k + 3.0)) * M_k ** ((ell + 3.0) / (k + 3.0))
    return m_ell / bound


# --- derivatives, Grönwall, spectra -----------------------------------------

def _central_jacobian(fn: Callable[[np.ndarray], np.ndarray], point: np.ndarray, h: float) -> np.ndarray:
    point = np.asarray(point, dtype=np.float64)
    cols = []
    for b in range(point.size):
        step = np.zeros_like(point)
        step[b] = h
        cols.append((np.asarray(fn(point + step)) - np.asarray(fn(point - step))) / (2.0 * h))
    return np.column_stack(cols)


def finite_difference_gradient_check(fn: Callable[[np.ndarray], np.ndarray], point, h: float) -> np.ndarray:
    """|J(h) − (4/3)J(h/2) + (1/3)J(h)| with central-difference Jacobians J."""
    coarse = _central_jacobian(fn, point, h)
    fine = _central_jacobian(fn, point, h / 2.0)
    return np.abs(coarse - 4.0 / 3.0 * fine + coarse / 3.0)


def sublinear_gronwall(y0: float, times, h, beta: float) -> np.ndarray:
    """(y0^{1−β} + (1−β)∫₀ᵗ h)^{1/(1−β)} on the given times; h is a scalar or a series on ``times``."""
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    t = np.asarray(times, dtype=np.float64)
    hs = np.broadcast_to(np.asarray(h, dtype=np.float64), t.shape)
    acc = integrate.cumulative_trapezoid(hs, t, initial=0.0) if t.size > 1 else np.zeros_like(t)
    return (y0 ** (1.0 - beta) + (1.0 - beta) * acc) ** (1.0 / (1.0 - beta))


def dirichlet_eigenvalue(n: int, length: float, mode: int = 1, stagger: str = "cell") -> float:
    """k-th smallest eigenvalue of −d²/dz² with zero ends on n cells.

    ``cell``: unknowns at cell centres, wall ghost = −interior.
    ``face``: unknowns on the n−1 interior faces, wall values zero.
    """
    h = length / n
    if stagger == "cell":
        diag = np.full(n, 2.0)
        diag[0] = diag[-1] = 3.0
        size = n
    elif stagger == "face":
        size = n - 1
        diag = np.full(size, 2.0)
    else:
        raise ValueError(f"Unknown stagger '{stagger}'")
    off = np.full(size - 1, -1.0)
    eigs = linalg.eigh_tridiagonal(diag / h ** 2, off / h ** 2, eigvals_only=True)
    return float(np.sort(eigs)[mode - 1])


# --- CLI registry ------------------------------------------------------------

def _moment_oracle(family: str = "box", L: float = 1.0, R: float = 1.0, q: float = 8.0, m: float = 3.0,
                   Rmax: float = math.inf, Lmax: float = 8.0, alpha: float = 0.0) -> float:
    return moment_quadrature(InitialDataSpec(family=family, L=L, R=R, q=q, m=m, Rmax=Rmax, Lmax=Lmax), alpha)


ORACLES: Dict[str, Callable[..., float]] = {
    "interpolation_constant": lambda k=2.0, ell=0.0, sharp=0.0: interpolation_constant(k, ell, bool(sharp)),
    "dirichlet_eigenvalue": lambda n=16, length=1.0, mode=1: dirichlet_eigenvalue(int(n), length, int(mode)),
    "gravity_exit_time": lambda x3=1.0, v3=1.0, g=1.0: gravity_exit_time_reference(x3, v3, g),
    "moment": _moment_oracle,
    "sublinear_gronwall": lambda y0=1.0, h=1.0, beta=0.5, t=1.0: float(
        sublinear_gronwall(y0, [0.0, t], h, beta)[-1]),
}


def evaluate_oracle(name: str, params: Dict[str, str]) -> float:
    if name not in ORACLES:
        raise KeyError(f"Unknown oracle '{name}' (known: {', '.join(sorted(ORACLES))})")
    kwargs = {key: (value if key == "family" else float(value)) for key, value in params.items()}
    return float(ORACLES[name](**kwargs))
