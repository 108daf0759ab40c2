from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from app.core.errors import DeadParticle, VnsError

Vec3 = np.ndarray


def vec3(x1: float, x2: float = 0.0, x3: float = 0.0) -> Vec3:
    v = np.array([x1, x2, x3], dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise VnsError(f"Non-finite vector component: {v}")
    return v


def as_vec3(value: Sequence[float]) -> Vec3:
    v = np.asarray(value, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise VnsError(f"Non-finite vector component: {v}")
    return v.copy()


def gravity_vector(g: float) -> Vec3:
    return np.array([0.0, 0.0, -float(g)])


@dataclass(frozen=True)
class Domain:
    """Periodic slab T²(Lx, Ly) × (0, Zmax) standing in for the half-space."""

    Lx: float = 1.0
    Ly: float = 1.0
    Zmax: float = 12.0

    def __post_init__(self) -> None:
        if not (self.Lx > 0 and self.Ly > 0 and self.Zmax > 0):
            raise VnsError(f"Domain extents must be positive, got {self}")

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    def wrap(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=np.float64, copy=True)
        out[..., 0] = np.mod(out[..., 0], self.Lx)
        out[..., 1] = np.mod(out[..., 1], self.Ly)
        return out


@dataclass(frozen=True)
class PhasePoint:
    x: Vec3
    v: Vec3

    @classmethod
    def of(cls, x: Sequence[float], v: Sequence[float]) -> "PhasePoint":
        return cls(as_vec3(x), as_vec3(v))


@dataclass
class Particle:
    state: PhasePoint
    weight: float
    f0_value: float
    origin: PhasePoint
    alive: bool = True
    exit_time: Optional[float] = None

    def __post_init__(self) -> None:
        if self.weight < 0 or self.f0_value < 0:
            raise VnsError("Particle weight and f0 value must be non-negative.")
        if self.alive == (self.exit_time is not None):
            raise VnsError("A particle is dead exactly when its exit time is set.")


def pointwise_value(p: Particle, t: float) -> float:
    """Value of f along the characteristic: e^{3t}·f₀(z₀)."""
    if not p.alive:
        raise DeadParticle(f"Particle absorbed at t={p.exit_time} carries no value at t={t}.")
    return float(np.exp(3.0 * t) * p.f0_value)


@dataclass
class ParticleEnsemble:
    """Struct-of-arrays carrier of f.

    Two views coexist: the measure view (constant ``weight``, used for every
    moment) and the pointwise view (``e^{3t}·f0_value``, used for N_q and the
    maximum principle). Absorbed particles stay in the arrays with ``alive``
    cleared and ``exit_time`` set; they form the graveyard. ``scheduled_exit``
    caches the closed-form gravity-only exit times once they are computed.
    """

    x: np.ndarray
    v: np.ndarray
    weight: np.ndarray
    f0_value: np.ndarray
    origin_x: np.ndarray
    origin_v: np.ndarray
    alive: np.ndarray
    exit_time: np.ndarray
    time: float = 0.0
    meta: Dict[str, float] = field(default_factory=dict)
    scheduled_exit: Optional[np.ndarray] = None

    @classmethod
    def from_arrays(cls, x: np.ndarray, v: np.ndarray, weight: np.ndarray,
                    f0_value: np.ndarray, time: float = 0.0) -> "ParticleEnsemble":
        x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1, 3)
        v = np.ascontiguousarray(v, dtype=np.float64).reshape(-1, 3)
        n = x.shape[0]
        return cls(
            x=x.copy(),
            v=v.copy(),
            weight=np.asarray(weight, dtype=np.float64).reshape(n).copy(),
            f0_value=np.asarray(f0_value, dtype=np.float64).reshape(n).copy(),
            origin_x=x.copy(),
            origin_v=v.copy(),
            alive=np.ones(n, dtype=bool),
            exit_time=np.full(n, np.nan),
            time=float(time),
        )

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(
            x=self.x.copy(), v=self.v.copy(), weight=self.weight.copy(),
            f0_value=self.f0_value.copy(), origin_x=self.origin_x.copy(),
            origin_v=self.origin_v.copy(), alive=self.alive.copy(),
            exit_time=self.exit_time.copy(), time=self.time, meta=dict(self.meta),
            scheduled_exit=None if self.scheduled_exit is None else self.scheduled_exit.copy(),
        )

    @property
    def alive_count(self) -> int:
        return int(np.count_nonzero(self.alive))

    def alive_mass(self) -> float:
        return float(np.sum(self.weight[self.alive]))

    def total_moment(self, alpha: float) -> float:
        w = self.weight[self.alive]
        speed = np.linalg.norm(self.v[self.alive], axis=1)
        if alpha == 0:
            return float(np.sum(w))
        return float(np.sum(w * speed ** alpha))

    def pointwise_values(self, t: Optional[float] = None) -> np.ndarray:
        t = self.time if t is None else t
        return np.exp(3.0 * t) * self.f0_value[self.alive]

    def particle(self, i: int) -> Particle:
        alive = bool(self.alive[i])
        return Particle(
            state=PhasePoint(self.x[i].copy(), self.v[i].copy()),
            weight=float(self.weight[i]),
            f0_value=float(self.f0_value[i]),
            origin=PhasePoint(self.origin_x[i].copy(), self.origin_v[i].copy()),
            alive=alive,
            exit_time=None if alive else float(self.exit_time[i]),
        )

    def graveyard(self) -> Dict[str, np.ndarray]:
        dead = ~self.alive
        return {
            "exit_time": self.exit_time[dead].copy(),
            "weight": self.weight[dead].copy(),
            "origin_x": self.origin_x[dead].copy(),
            "origin_v": self.origin_v[dead].copy(),
        }
