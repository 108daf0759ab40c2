"""Characteristic flows of ẋ = v, v̇ = (Pu)(t, x) + G − v.

Within a substep the field is frozen, which makes the flow an exponential
integrator: exact for constant fields and therefore exact for the
gravity-only flow whatever the step.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.core.errors import SingularDifference
from app.core.phase import PhasePoint, gravity_vector
from app.physics.fields import VelocitySampler, ZeroField, check_finite

logger = logging.getLogger(__name__)

MAX_BISECTION_STEPS = 200


@dataclass(frozen=True)
class FlowResult:
    X: np.ndarray
    V: np.ndarray
    exited: bool = False
    exit_time: Optional[float] = None


def phi1(h):
    return -np.expm1(-np.asarray(h, dtype=np.float64))


def phi2(h):
    """h + e^{−h} − 1, with a series branch where the difference cancels."""
    h = np.asarray(h, dtype=np.float64)
    small = np.abs(h) < 1e-3
    hs = np.where(small, h, 0.0)
    series = hs * hs * (0.5 - hs * (1.0 / 6.0 - hs * (1.0 / 24.0 - hs * (1.0 / 120.0 - hs / 720.0))))
    direct = h + np.expm1(-h)
    return np.where(small, series, direct)


def gravity_flow_arrays(s: float, t: float, x: np.ndarray, v: np.ndarray, g: float) -> Tuple[np.ndarray, np.ndarray]:
    G = gravity_vector(g)
    h = s - t
    X = x + phi1(h) * v + phi2(h) * G
    V = np.exp(-h) * v + phi1(h) * G
    return X, V


def gravity_flow(s: float, t: float, z: PhasePoint, g: float) -> FlowResult:
    X, V = gravity_flow_arrays(s, t, z.x, z.v, g)
    return FlowResult(X=X, V=V)


def exit_times_in_step(x3, v3, a3, dt: float, tol_exit: float = 1e-10) -> np.ndarray:
    """Earliest s in (0, dt] with X3(s) = 0 for each row, NaN when there is none.

    X3(s) = x3 + (1−e^{−s})v3 + (s+e^{−s}−1)a3 and X3' has at most one zero,
    so the first crossing is bracketed either before or after that extremum.
    """
    x3 = np.atleast_1d(np.asarray(x3, dtype=np.float64))
    v3 = np.broadcast_to(np.asarray(v3, dtype=np.float64), x3.shape)
    a3 = np.broadcast_to(np.asarray(a3, dtype=np.float64), x3.shape)
    dt = np.broadcast_to(np.asarray(dt, dtype=np.float64), x3.shape)

    def height(s):
        return x3 + phi1(s) * v3 + phi2(s) * a3

    out = np.full(x3.shape, np.nan)
    already_out = x3 <= 0.0
    out[already_out] = 0.0

    denom = a3 - v3
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom != 0.0, a3 / denom, np.nan)
        s_ext = np.where((ratio > 0.0) & (ratio < 1.0), -np.log(ratio), np.nan)
    has_ext = np.isfinite(s_ext) & (s_ext < dt)
    s_ext = np.where(has_ext, s_ext, 0.0)

    h_ext = height(s_ext)
    h_end = height(dt)

    before_ext = has_ext & (h_ext <= 0.0) & ~already_out
    after_ext = ~before_ext & (h_end <= 0.0) & ~already_out

    lo = np.where(before_ext, 0.0, s_ext)
    hi = np.where(before_ext, s_ext, dt)
    active = before_ext | after_ext
    if not np.any(active):
        return out

    lo, hi = lo[active], hi[active]
    xa, va, aa = x3[active], v3[active], a3[active]
    width_floor = 4.0 * np.finfo(float).eps * np.maximum(dt[active], 1.0)
    # each root is refined on its own so results do not depend on the batch
    done = np.zeros(lo.shape, dtype=bool)
    for _ in range(MAX_BISECTION_STEPS):
        h_hi = xa + phi1(hi) * va + phi2(hi) * aa
        done |= (np.abs(h_hi) <= tol_exit) | (hi - lo <= width_floor)
        if np.all(done):
            break
        mid = 0.5 * (lo + hi)
        h_mid = xa + phi1(mid) * va + phi2(mid) * aa
        down = h_mid <= 0.0
        hi = np.where(~done & down, mid, hi)
        lo = np.where(~done & ~down, mid, lo)
    out[active] = hi
    return out


def gravity_exit_times(x3, v3, g: float, tol_exit: float = 1e-10) -> np.ndarray:
    """First wall crossing of the gravity-only flow, bracketed independently of any step size.

    X3 is negative by s = (x3 + |v3| + 2g)/g + 1, so every root lies in that window.
    """
    x3 = np.atleast_1d(np.asarray(x3, dtype=np.float64))
    v3 = np.broadcast_to(np.asarray(v3, dtype=np.float64), x3.shape)
    horizon = (np.maximum(x3, 0.0) + np.abs(v3) + 2.0 * g) / g + 1.0
    return exit_times_in_step(x3, v3, -g, horizon, tol_exit)


def exit_time_in_step(z: PhasePoint, a_eff, dt: float, tol_exit: float = 1e-10) -> Optional[float]:
    a = np.asarray(a_eff, dtype=np.float64).reshape(3)
    s = exit_times_in_step(z.x[2], z.v[2], a[2], dt, tol_exit)[0]
    return None if np.isnan(s) else float(s)


def coupled_flow_step_arrays(x: np.ndarray, v: np.ndarray, t: float, dt: float, u: VelocitySampler,
                             g: float, tol_exit: float = 1e-10) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One frozen-field substep for a batch; returns (X, V, exit offset or NaN)."""
    G = gravity_vector(g)
    a = G + check_finite(u(t, x))
    X = x + phi1(dt) * v + phi2(dt) * a
    V = np.exp(-dt) * v + phi1(dt) * a
    s = exit_times_in_step(x[:, 2], v[:, 2], a[:, 2], dt, tol_exit)
    hit = np.isfinite(s)
    if np.any(hit):
        sh = s[hit][:, None]
        X[hit] = x[hit] + phi1(sh) * v[hit] + phi2(sh) * a[hit]
        V[hit] = np.exp(-sh) * v[hit] + phi1(sh) * a[hit]
    return X, V, s


def coupled_flow_step(z: PhasePoint, t: float, dt: float, u: VelocitySampler, g: float,
                      tol_exit: float = 1e-10) -> FlowResult:
    X, V, s = coupled_flow_step_arrays(z.x[None, :], z.v[None, :], t, dt, u, g, tol_exit)
    exited = bool(np.isfinite(s[0]))
    return FlowResult(X=X[0], V=V[0], exited=exited, exit_time=t + float(s[0]) if exited else None)


def forward_flow(z: PhasePoint, t_start: float, t_end: float, u: VelocitySampler, g: float,
                 dt: float = 1e-2, tol_exit: float = 1e-10) -> FlowResult:
    """Integrate from t_start to t_end, stopping at the first wall crossing."""
    span = t_end - t_start
    if span <= 0:
        return FlowResult(X=z.x.copy(), V=z.v.copy())
    if isinstance(u, ZeroField):
        s = gravity_exit_times(z.x[2], z.v[2], g, tol_exit)[0]
        if s > span:
            s = np.nan
        stop = span if np.isnan(s) else s
        X, V = gravity_flow_arrays(t_start + stop, t_start, z.x, z.v, g)
        return FlowResult(X=X, V=V, exited=not np.isnan(s), exit_time=None if np.isnan(s) else t_start + float(s))
    n = max(1, int(math.ceil(span / dt - 1e-12)))
    h = span / n
    x, v = z.x[None, :].copy(), z.v[None, :].copy()
    t = t_start
    for _ in range(n):
        x, v, s = coupled_flow_step_arrays(x, v, t, h, u, g, tol_exit)
        if np.isfinite(s[0]):
            return FlowResult(X=x[0], V=v[0], exited=True, exit_time=t + float(s[0]))
        t += h
    return FlowResult(X=x[0], V=v[0])


def backward_flow(t: float, x, v, u: VelocitySampler, g: float, step: float = 1e-2) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    if t <= 0:
        return x.copy(), v.copy()
    if isinstance(u, ZeroField):
        return gravity_flow_arrays(0.0, t, x, v, g)
    G = gravity_vector(g)
    n = max(1, int(math.ceil(t / step - 1e-12)))
    h = t / n
    X, V = x.copy(), v.copy()
    tau = t
    for _ in range(n):
        u.available(tau)
        a = G + check_finite(u(tau, X))
        X = X + phi1(-h) * V + phi2(-h) * a
        V = np.exp(h) * V + phi1(-h) * a
        tau -= h
    return X, V


def backward_map_gamma(t: float, x, v, u: VelocitySampler, g: float, step: float = 1e-2) -> np.ndarray:
    _, V0 = backward_flow(t, x, v, u, g, step)
    return V0[0] if np.ndim(v) == 1 else V0


def gamma_inverse_free(t: float, w, g: float) -> np.ndarray:
    """Inverse of Γ_{t,x} for the zero field: e^{−t}w + (1−e^{−t})G."""
    w = np.asarray(w, dtype=np.float64)
    return math.exp(-t) * w + phi1(t) * gravity_vector(g)


def jacobian_certificate(t: float, x, v, u: VelocitySampler, g: float, h: Optional[float] = None,
                         step: float = 1e-2) -> float:
    """det D_vΓ_{t,x}(v) by central differences."""
    x = np.asarray(x, dtype=np.float64).reshape(3)
    v = np.asarray(v, dtype=np.float64).reshape(3)
    if h is None:
        h = 1e-5 * (1.0 + float(np.linalg.norm(v)))
    offsets = np.vstack([np.eye(3) * h, -np.eye(3) * h])
    vs = v[None, :] + offsets
    xs = np.broadcast_to(x, vs.shape)
    gammas = backward_map_gamma(t, xs, vs, u, g, step)
    jac = (gammas[:3] - gammas[3:]).T / (2.0 * h)
    if not np.all(np.isfinite(jac)):
        raise SingularDifference(f"Non-finite Jacobian column at t={t}, x={x}, v={v}")
    return float(np.linalg.det(jac))


def displacement_bounds_check(t: float, x, v, u: VelocitySampler, g: float,
                              step: float = 1e-2) -> Tuple[float, float]:
    """Both sides of |Γ⁻¹(w)| ≤ e^{−t}[|w| + (e^t−1)|G| + ∫₀ᵗ e^τ‖Pu(τ)‖_∞ dτ] with w = Γ(v)."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    w = backward_map_gamma(t, x, v, u, g, step)
    lhs = float(np.linalg.norm(v))
    rhs = math.exp(-t) * (float(np.linalg.norm(w)) + math.expm1(t) * g + u.weighted_budget(t))
    return lhs, rhs


def initial_velocity_bound(t: float, x, v, u: VelocitySampler, g: float,
                           step: float = 1e-2) -> Tuple[float, float]:
    """Both sides of |v| ≤ |V(0)| + (1−e^{−t})|G| + ∫₀ᵗ‖Pu‖_∞."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    w = backward_map_gamma(t, x, v, u, g, step)
    lhs = float(np.linalg.norm(v))
    rhs = float(np.linalg.norm(w)) + float(phi1(t)) * g + u.budget(0.0, t)
    return lhs, rhs
