import struct

import numpy as np
import pytest

from netform.coupling import RunStatus, Status
from netform.errors import FormatError, SnapshotIOError
from netform.mesh import Grid, ScalarField, VectorField
from netform.snapshots import (
    INDEX_FILE,
    MAGIC,
    decode_snapshot,
    encode_snapshot,
    read_snapshot,
    read_trajectory,
    write_snapshot,
    write_trajectory,
)


def _random_state(grid, rng):
    m = VectorField.from_array(grid, rng.standard_normal((grid.dim,) + grid.shape) * 10.0 ** rng.integers(-300, 300))
    p = ScalarField(grid, rng.standard_normal(grid.shape))
    return m, p


def _blob(grid=None):
    grid = grid or Grid.uniform(2, 5)
    m, p = _random_state(grid, np.random.default_rng(0))
    return encode_snapshot(m, p, 0.25)


def test_round_trip_is_bit_exact():
    rng = np.random.default_rng(42)
    for i in range(100):
        dim = 1 + i % 2
        n = tuple(int(k) for k in rng.integers(3, 12, dim))
        grid = Grid(dim=dim, n=n, extent=tuple(rng.uniform(0.1, 5.0, dim)))
        m, p = _random_state(grid, rng)
        t = float(rng.uniform(0, 10))
        m2, p2, t2 = decode_snapshot(encode_snapshot(m, p, t))
        assert t2 == t
        assert p2.grid == grid
        assert m2.array().tobytes() == m.array().tobytes()
        assert p2.values.tobytes() == p.values.tobytes()


def test_header_layout():
    data = _blob(Grid.uniform(1, 9))
    assert data[:4] == MAGIC
    assert struct.unpack_from("<II", data, 4) == (1, 1)
    assert len(data) == 12 + 4 + 8 + 8 + 8 * 9 * 2


def test_truncated_file():
    data = _blob()
    for cut in (3, 20, len(data) - 1):
        with pytest.raises(FormatError):
            decode_snapshot(data[:cut])


def test_bad_magic_names_the_expected_one():
    data = _blob()
    with pytest.raises(FormatError, match="NWF1"):
        decode_snapshot(b"XXXX" + data[4:])


def test_bad_version():
    data = _blob()
    with pytest.raises(FormatError, match="version"):
        decode_snapshot(data[:4] + struct.pack("<I", 7) + data[8:])


def test_trailing_bytes():
    with pytest.raises(FormatError):
        decode_snapshot(_blob() + b"\x00" * 8)


def test_missing_file_is_an_io_error(tmp_path):
    with pytest.raises(SnapshotIOError) as info:
        read_snapshot(tmp_path / "absent.nwf")
    assert isinstance(info.value, OSError)


def test_non_finite_values_are_flagged(tmp_path):
    grid = Grid.uniform(1, 9)
    values = np.zeros((1,) + grid.shape)
    values[0, 4] = np.inf
    m = VectorField.from_array(grid, values, blown_up=True)
    write_snapshot(tmp_path / "s.nwf", m, ScalarField.zeros(grid), 0.5)
    m2, p2, _ = read_snapshot(tmp_path / "s.nwf")
    assert m2.components[0].blown_up
    assert not m2.is_finite()
    assert p2.blown_up


def test_trajectory_directory_round_trip(tmp_path, make_params, make_trajectory):
    grid = Grid.uniform(2, 9)
    base = make_params(grid, m_amp=0.3).m0.array()
    traj = make_trajectory(grid, [0.0, 0.1, 0.2], lambda t: (1 + t) * base)
    traj.status = Status(RunStatus.BLEW_UP, 0.2, "threshold exceeded")
    write_trajectory(tmp_path / "traj", traj)
    assert (tmp_path / "traj" / INDEX_FILE).exists()

    loaded = read_trajectory(tmp_path / "traj")
    assert len(loaded) == 3
    np.testing.assert_array_equal(loaded.times, traj.times)
    np.testing.assert_array_equal(loaded.m_array(), traj.m_array())
    assert loaded.status == traj.status
    assert loaded.dt == traj.dt


def test_empty_trajectory_directory(tmp_path):
    with pytest.raises(SnapshotIOError):
        read_trajectory(tmp_path / "nothing")
