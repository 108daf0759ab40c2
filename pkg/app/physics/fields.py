"""Velocity samplers seen by the characteristic flows.

Every sampler applies the extension operator P: the field is zero at and
below the wall (x3 <= 0), so the sup norm of the sampled field never exceeds
the interior one.
"""
import functools
import math

import numpy as np
from scipy import integrate

from app.core.errors import NonFiniteField


def _as_points(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


class VelocitySampler:
    """Read-only view of u(t, x) and ∇u(t, x), extended by zero below the wall."""

    def __call__(self, t: float, x) -> np.ndarray:
        pts = _as_points(x)
        out = np.zeros_like(pts)
        inside = pts[:, 2] > 0.0
        if np.any(inside):
            out[inside] = self._interior(t, pts[inside])
        if np.ndim(x) == 1:
            return out[0]
        return out

    def gradient(self, t: float, x) -> np.ndarray:
        pts = _as_points(x)
        out = np.zeros((pts.shape[0], 3, 3))
        inside = pts[:, 2] > 0.0
        if np.any(inside):
            out[inside] = self._interior_gradient(t, pts[inside])
        if np.ndim(x) == 1:
            return out[0]
        return out

    def sup_norm(self, t: float) -> float:
        raise NotImplementedError

    def grad_sup_norm(self, t: float) -> float:
        raise NotImplementedError

    def available(self, t: float) -> None:
        """Raise FieldHistoryUnavailable when the field cannot be evaluated at t."""

    def budget(self, t_lo: float, t_hi: float, kind: str = "u") -> float:
        norm = self.sup_norm if kind == "u" else self.grad_sup_norm
        if t_hi <= t_lo:
            return 0.0
        value, _ = integrate.quad(norm, t_lo, t_hi, limit=200)
        return float(value)

    def weighted_budget(self, t: float) -> float:
        """∫₀ᵗ e^τ ‖Pu(τ)‖_∞ dτ."""
        if t <= 0:
            return 0.0
        value, _ = integrate.quad(lambda s: math.exp(s) * self.sup_norm(s), 0.0, t, limit=200)
        return float(value)

    def _interior(self, t: float, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _interior_gradient(self, t: float, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def check_finite(values: np.ndarray, what: str = "velocity") -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFiniteField(f"Sampler returned a non-finite {what}.")
    return values


class ZeroField(VelocitySampler):
    def __call__(self, t: float, x) -> np.ndarray:
        return np.zeros(np.shape(x), dtype=np.float64)

    def gradient(self, t: float, x) -> np.ndarray:
        return np.zeros(np.shape(x)[:-1] + (3, 3))

    def sup_norm(self, t: float) -> float:
        return 0.0

    def grad_sup_norm(self, t: float) -> float:
        return 0.0

    def budget(self, t_lo: float, t_hi: float, kind: str = "u") -> float:
        return 0.0

    def weighted_budget(self, t: float) -> float:
        return 0.0


class ConstantField(VelocitySampler):
    """u ≡ c in the interior. Not wall-compatible; used to test the integrator."""

    def __init__(self, c) -> None:
        self.c = np.asarray(c, dtype=np.float64).reshape(3)

    def _interior(self, t: float, pts: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.c, pts.shape).copy()

    def _interior_gradient(self, t: float, pts: np.ndarray) -> np.ndarray:
        return np.zeros((pts.shape[0], 3, 3))

    def sup_norm(self, t: float) -> float:
        return float(np.linalg.norm(self.c))

    def grad_sup_norm(self, t: float) -> float:
        return 0.0


def _shear_profile(z):
    # z·e^{1-z}: zero at the wall, unit maximum at z = 1
    e = np.exp(1.0 - z)
    return z * e, (1.0 - z) * e, (z - 2.0) * e


def _cell_profile(z):
    # z²·e^{2-z}/4: value and slope vanish at the wall, unit maximum at z = 2
    e = np.exp(2.0 - z) / 4.0
    return z * z * e, (2.0 * z - z * z) * e, (2.0 - 4.0 * z + z * z) * e


@functools.lru_cache(maxsize=32)
def _spatial_sup_norms(profile: str, k: float) -> tuple:
    theta = np.linspace(0.0, 2.0 * np.pi, 721)[:, None]
    z = np.concatenate([np.linspace(0.0, 4.0, 8001)[1:], np.linspace(4.0, 40.0, 2001)[1:]])[None, :]
    s, c = np.sin(theta), np.cos(theta)
    if profile == "shear":
        phi, dphi, _ = _shear_profile(z)
        speed = np.abs(phi * s)
        # ∇u has one non-zero row (0, k·φ·cos, φ'·sin)
        grad = np.sqrt((k * phi * c) ** 2 + (dphi * s) ** 2)
    elif profile == "cellular":
        phi, dphi, d2phi = _cell_profile(z)
        u1 = dphi * s / k
        u3 = -phi * c
        speed = np.sqrt(u1 ** 2 + u3 ** 2)
        a = dphi * c
        b = k * phi * s
        cc = d2phi * s / k
        # 2×2 block [[a, cc], [b, -a]] in the (x1, x3) plane
        fro2 = 2.0 * a * a + b * b + cc * cc
        det = -a * a - b * cc
        grad = np.sqrt(0.5 * (fro2 + np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))))
    else:
        raise ValueError(f"Unknown field profile '{profile}'")
    return float(np.max(speed)), float(np.max(grad))


class PrescribedField(VelocitySampler):
    """Smooth divergence-free field A(t)·Φ(x) vanishing at the wall.

    ``shear``:    Φ = (φ(x3)·sin(2πx2/Ly), 0, 0), φ(z) = z·e^{1-z}
    ``cellular``: stream function ψ = φ(x3)·sin(kx1)/k in the (x1, x3) plane,
                  φ(z) = z²e^{2-z}/4, k = 2π/Lx; it has up- and down-drafts.
    A(t) = amplitude·(1+t)^{-decay}.
    """

    def __init__(self, profile: str, amplitude: float, decay: float = 0.0,
                 Lx: float = 1.0, Ly: float = 1.0) -> None:
        self.profile = profile
        self.amplitude = float(amplitude)
        self.decay = float(decay)
        self.k = 2.0 * np.pi / (Ly if profile == "shear" else Lx)
        self.spatial_sup, self.spatial_grad_sup = _spatial_sup_norms(profile, float(self.k))

    @classmethod
    def for_budget(cls, profile: str, budget: float, horizon: float, kind: str = "u",
                   decay: float = 0.0, Lx: float = 1.0, Ly: float = 1.0) -> "PrescribedField":
        """Choose the amplitude so that ∫₀^horizon of the sup norm equals ``budget``."""
        unit = cls(profile, 1.0, decay, Lx, Ly)
        spatial = unit.spatial_sup if kind == "u" else unit.spatial_grad_sup
        amplitude = budget / (spatial * unit.time_integral(0.0, horizon))
        return cls(profile, amplitude, decay, Lx, Ly)

    def time_factor(self, t: float) -> float:
        return self.amplitude * (1.0 + t) ** (-self.decay)

    def time_integral(self, t_lo: float, t_hi: float) -> float:
        d = self.decay
        if d == 1.0:
            unit = math.log((1.0 + t_hi) / (1.0 + t_lo))
        else:
            unit = ((1.0 + t_hi) ** (1.0 - d) - (1.0 + t_lo) ** (1.0 - d)) / (1.0 - d)
        return self.amplitude * unit

    def _interior(self, t: float, pts: np.ndarray) -> np.ndarray:
        a = self.time_factor(t)
        out = np.zeros_like(pts)
        z = pts[:, 2]
        if self.profile == "shear":
            phi, _, _ = _shear_profile(z)
            out[:, 0] = a * phi * np.sin(self.k * pts[:, 1])
        else:
            phi, dphi, _ = _cell_profile(z)
            th = self.k * pts[:, 0]
            out[:, 0] = a * dphi * np.sin(th) / self.k
            out[:, 2] = -a * phi * np.cos(th)
        return out

    def _interior_gradient(self, t: float, pts: np.ndarray) -> np.ndarray:
        a = self.time_factor(t)
        out = np.zeros((pts.shape[0], 3, 3))
        z = pts[:, 2]
        if self.profile == "shear":
            phi, dphi, _ = _shear_profile(z)
            th = self.k * pts[:, 1]
            out[:, 0, 1] = a * self.k * phi * np.cos(th)
            out[:, 0, 2] = a * dphi * np.sin(th)
        else:
            phi, dphi, d2phi = _cell_profile(z)
            th = self.k * pts[:, 0]
            out[:, 0, 0] = a * dphi * np.cos(th)
            out[:, 0, 2] = a * d2phi * np.sin(th) / self.k
            out[:, 2, 0] = a * self.k * phi * np.sin(th)
            out[:, 2, 2] = -a * dphi * np.cos(th)
        return out

    def sup_norm(self, t: float) -> float:
        return abs(self.time_factor(t)) * self.spatial_sup

    def grad_sup_norm(self, t: float) -> float:
        return abs(self.time_factor(t)) * self.spatial_grad_sup

    def budget(self, t_lo: float, t_hi: float, kind: str = "u") -> float:
        if t_hi <= t_lo:
            return 0.0
        spatial = self.spatial_sup if kind == "u" else self.spatial_grad_sup
        return abs(self.time_integral(t_lo, t_hi)) * spatial
