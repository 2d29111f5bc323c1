"""
Binary snapshot files and trajectory directories.

Snapshot layout, all little-endian:
    magic "NWF1" | version u32 | dim u32 | n u32 * dim | extent f64 * dim |
    time f64 | p f64 * nodes | m_1 f64 * nodes | ... | m_dim f64 * nodes
Field values are row-major over the grid.
"""

import csv
import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from netform.coupling import RunStatus, Status, Trajectory
from netform.errors import DomainError, FormatError, SnapshotIOError
from netform.mesh import Grid, ScalarField, VectorField

logger = logging.getLogger(__name__)

MAGIC = b"NWF1"
VERSION = 1
INDEX_FILE = "trajectory_index.csv"
STATUS_FILE = "status.csv"

PathLike = Union[str, Path]


def encode_snapshot(m: VectorField, p: ScalarField, t: float) -> bytes:
    grid = p.grid
    if m.grid != grid:
        raise DomainError("m and p live on different grids")
    header = struct.pack(
        f"<4sII{grid.dim}I{grid.dim}dd", MAGIC, VERSION, grid.dim, *grid.n, *grid.extent, float(t)
    )
    payload = [p.values.astype("<f8").tobytes()]
    payload += [c.values.astype("<f8").tobytes() for c in m.components]
    return header + b"".join(payload)


def decode_snapshot(data: bytes) -> Tuple[VectorField, ScalarField, float]:
    if len(data) < 12:
        raise FormatError(f"snapshot is truncated: {len(data)} bytes cannot hold a header")
    magic, version, dim = struct.unpack_from("<4sII", data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC.decode()!r}")
    if version != VERSION:
        raise FormatError(f"unsupported snapshot version {version}, expected {VERSION}")
    if dim not in (1, 2):
        raise FormatError(f"snapshot dimension must be 1 or 2, got {dim}")
    geometry = f"<{dim}I{dim}dd"
    offset = 12
    if len(data) < offset + struct.calcsize(geometry):
        raise FormatError("snapshot is truncated inside the header")
    fields = struct.unpack_from(geometry, data, offset)
    offset += struct.calcsize(geometry)
    n, extent, t = fields[:dim], fields[dim:2 * dim], fields[-1]
    nodes = int(np.prod(n))
    expected = offset + 8 * nodes * (1 + dim)
    if len(data) != expected:
        raise FormatError(f"snapshot payload has {len(data)} bytes, header implies {expected}")
    try:
        grid = Grid(dim=dim, n=n, extent=extent)
    except DomainError as e:
        raise FormatError(f"invalid grid in snapshot header: {e}")
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64).reshape((1 + dim,) + grid.shape)
    flagged = not np.all(np.isfinite(values))
    p = ScalarField(grid, values[0], blown_up=flagged)
    m = VectorField.from_array(grid, values[1:], blown_up=flagged)
    return m, p, t


def write_snapshot(path: PathLike, m: VectorField, p: ScalarField, t: float):
    data = encode_snapshot(m, p, t)
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise SnapshotIOError(f"cannot write snapshot {path}: {e}")


def read_snapshot(path: PathLike) -> Tuple[VectorField, ScalarField, float]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise SnapshotIOError(f"cannot read snapshot {path}: {e}")
    return decode_snapshot(data)


def snapshot_name(index: int) -> str:
    return f"snap_{index:06d}.nwf"


def write_trajectory(directory: PathLike, traj: Trajectory):
    """Snapshot files plus the index and status tables"""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / INDEX_FILE, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["index", "time", "file"])
            for i, snap in enumerate(traj.snapshots):
                name = snapshot_name(i)
                write_snapshot(directory / name, snap.m, snap.p, snap.time)
                writer.writerow([i, f"{snap.time:.17g}", name])
        with open(directory / STATUS_FILE, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["status", "time", "dt", "store_every", "message"])
            time = "nan" if traj.status.time is None else f"{traj.status.time:.17g}"
            writer.writerow([traj.status.kind.value, time, f"{traj.dt:.17g}", traj.store_every, traj.status.message])
    except OSError as e:
        raise SnapshotIOError(f"cannot write trajectory to {directory}: {e}")
    logger.info("wrote %d snapshots to %s", len(traj), directory)


def read_trajectory(directory: PathLike) -> Trajectory:
    directory = Path(directory)
    try:
        with open(directory / STATUS_FILE, newline="") as f:
            status_row = next(csv.DictReader(f))
        with open(directory / INDEX_FILE, newline="") as f:
            index = list(csv.DictReader(f))
    except StopIteration:
        raise FormatError(f"{directory / STATUS_FILE} has no data row")
    except OSError as e:
        raise SnapshotIOError(f"cannot read trajectory from {directory}: {e}")
    if not index:
        raise FormatError(f"{directory / INDEX_FILE} lists no snapshots")

    time = float(status_row["time"])
    status = Status(RunStatus(status_row["status"]), None if np.isnan(time) else time, status_row["message"])
    traj = None
    for row in index:
        m, p, t = read_snapshot(directory / row["file"])
        if traj is None:
            traj = Trajectory(p.grid, float(status_row["dt"]), int(status_row["store_every"]), status=status)
        traj.append(t, m, p)
    return traj
