"""Flat little-endian binary snapshots of the particle ensemble (VNSE) and the MAC field (VNSF)."""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from app.core.errors import SnapshotFormatError
from app.core.phase import Domain, ParticleEnsemble
from app.physics.fluid import FluidField

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

ENSEMBLE_MAGIC = b"VNSE"
ENSEMBLE_HEADER = struct.Struct("<4sIQd")
PARTICLE_RECORD = np.dtype([
    ("x", "<f8", (3,)),
    ("v", "<f8", (3,)),
    ("weight", "<f8"),
    ("f0_value", "<f8"),
    ("alive", "u1"),
])

FIELD_MAGIC = b"VNSF"
FIELD_HEADER = struct.Struct("<4sIIIIdddd")


@dataclass(frozen=True)
class EnsembleSnapshot:
    time: float
    x: np.ndarray
    v: np.ndarray
    weight: np.ndarray
    f0_value: np.ndarray
    alive: np.ndarray

    def __len__(self) -> int:
        return int(self.x.shape[0])


def write_ensemble(path: Union[str, Path], ens: ParticleEnsemble) -> Path:
    path = Path(path)
    records = np.zeros(len(ens), dtype=PARTICLE_RECORD)
    records["x"] = ens.x
    records["v"] = ens.v
    records["weight"] = ens.weight
    records["f0_value"] = ens.f0_value
    records["alive"] = ens.alive.astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(ENSEMBLE_HEADER.pack(ENSEMBLE_MAGIC, FORMAT_VERSION, len(ens), float(ens.time)))
        f.write(records.tobytes())
    logger.debug("Wrote ensemble snapshot %s (%d particles, t=%.4g)", path, len(ens), ens.time)
    return path


def read_ensemble(path: Union[str, Path]) -> EnsembleSnapshot:
    raw = Path(path).read_bytes()
    if len(raw) < ENSEMBLE_HEADER.size:
        raise SnapshotFormatError(f"{path}: too short for an ensemble header")
    magic, version, count, time = ENSEMBLE_HEADER.unpack_from(raw, 0)
    if magic != ENSEMBLE_MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {magic!r}, expected {ENSEMBLE_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise SnapshotFormatError(f"{path}: unsupported ensemble version {version}")
    expected = ENSEMBLE_HEADER.size + count * PARTICLE_RECORD.itemsize
    if len(raw) != expected:
        raise SnapshotFormatError(f"{path}: {len(raw)} bytes, expected {expected} for {count} particles")
    records = np.frombuffer(raw, dtype=PARTICLE_RECORD, count=count, offset=ENSEMBLE_HEADER.size)
    return EnsembleSnapshot(
        time=float(time),
        x=records["x"].astype(np.float64),
        v=records["v"].astype(np.float64),
        weight=records["weight"].astype(np.float64),
        f0_value=records["f0_value"].astype(np.float64),
        alive=records["alive"].astype(bool),
    )


def _z_major(a: np.ndarray) -> bytes:
    # z slowest, x fastest
    return np.ascontiguousarray(a.transpose(2, 1, 0), dtype="<f8").tobytes()


def _from_z_major(raw: bytes, offset: int, shape) -> np.ndarray:
    nx, ny, nz = shape
    flat = np.frombuffer(raw, dtype="<f8", count=nx * ny * nz, offset=offset)
    return flat.reshape(nz, ny, nx).transpose(2, 1, 0).astype(np.float64)


def write_field(path: Union[str, Path], field: FluidField) -> Path:
    path = Path(path)
    nx, ny, nz = field.grid
    d = field.domain
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(FIELD_HEADER.pack(FIELD_MAGIC, FORMAT_VERSION, nx, ny, nz, d.Lx, d.Ly, d.Zmax, float(field.time)))
        for a in (field.u1, field.u2, field.u3, field.p):
            f.write(_z_major(a))
    logger.debug("Wrote field snapshot %s (grid %s, t=%.4g)", path, field.grid, field.time)
    return path


def read_field(path: Union[str, Path]) -> FluidField:
    raw = Path(path).read_bytes()
    if len(raw) < FIELD_HEADER.size:
        raise SnapshotFormatError(f"{path}: too short for a field header")
    magic, version, nx, ny, nz, Lx, Ly, Zmax, time = FIELD_HEADER.unpack_from(raw, 0)
    if magic != FIELD_MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {magic!r}, expected {FIELD_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise SnapshotFormatError(f"{path}: unsupported field version {version}")
    cells = (nx, ny, nz)
    faces = (nx, ny, nz + 1)
    expected = FIELD_HEADER.size + 8 * (3 * nx * ny * nz + nx * ny * (nz + 1))
    if len(raw) != expected:
        raise SnapshotFormatError(f"{path}: {len(raw)} bytes, expected {expected} for grid {cells}")
    offset = FIELD_HEADER.size
    arrays = []
    for shape in (cells, cells, faces, cells):
        arrays.append(_from_z_major(raw, offset, shape))
        offset += 8 * shape[0] * shape[1] * shape[2]
    u1, u2, u3, p = arrays
    return FluidField(u1=u1, u2=u2, u3=u3, p=p, time=float(time), domain=Domain(Lx, Ly, Zmax))
