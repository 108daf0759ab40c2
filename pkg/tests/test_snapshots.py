import numpy as np
import pytest

from app.core.errors import SnapshotFormatError
from app.core.phase import Domain, ParticleEnsemble
from app.core.snapshots import FIELD_HEADER, read_ensemble, read_field, write_ensemble, write_field
from app.physics.fluid import FluidField


def test_ensemble_snapshot_keeps_every_record(tmp_path, rng):
    ens = ParticleEnsemble.from_arrays(rng.uniform(0, 1, (5, 3)), rng.normal(size=(5, 3)),
                                       rng.uniform(0, 1, 5), rng.uniform(0, 1, 5), time=1.25)
    ens.alive[[1, 3]] = False
    path = write_ensemble(tmp_path / "snap" / "ens.vnse", ens)
    snap = read_ensemble(path)
    assert len(snap) == 5
    assert snap.time == 1.25
    assert np.array_equal(snap.x, ens.x) and np.array_equal(snap.v, ens.v)
    assert np.array_equal(snap.weight, ens.weight)
    assert np.array_equal(snap.alive, ens.alive)


def test_field_snapshot_preserves_axis_order(tmp_path, rng):
    domain = Domain(1.0, 2.0, 3.0)
    field = FluidField.zeros((3, 4, 5), domain, time=0.5)
    field.u1[:] = rng.normal(size=field.u1.shape)
    field.u3[:] = rng.normal(size=field.u3.shape)
    field.p[:] = rng.normal(size=field.p.shape)
    back = read_field(write_field(tmp_path / "f.vnsf", field))
    assert back.grid == field.grid
    assert back.domain == domain
    assert back.time == 0.5
    for name in ("u1", "u2", "u3", "p"):
        assert np.array_equal(getattr(back, name), getattr(field, name))


def test_field_bytes_are_z_major(tmp_path):
    field = FluidField.zeros((2, 2, 2), Domain(1.0, 1.0, 1.0))
    field.u1[1, 0, 0] = 7.0
    raw = write_field(tmp_path / "f.vnsf", field).read_bytes()
    first = np.frombuffer(raw, dtype="<f8", count=2, offset=FIELD_HEADER.size)
    assert first[1] == 7.0


def test_bad_magic_and_truncation(tmp_path, box_ensemble):
    path = write_ensemble(tmp_path / "e.vnse", box_ensemble)
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SnapshotFormatError):
        read_ensemble(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(SnapshotFormatError):
        read_ensemble(path)
    path.write_bytes(raw[:6])
    with pytest.raises(SnapshotFormatError):
        read_field(path)
