"""Binary snapshots of wave states and CSV energy traces."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .grid import WaveState

MAGIC = b"FWLB"
VERSION = 1


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotHeader:
    version: int
    n: int
    cells: tuple
    h: float
    dt: float
    t: float
    mask_id: int


def _atomic_write(path: str, payload: bytes) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_snapshot(state: WaveState, h: float, dt: float) -> bytes:
    """Header ``magic, version, n, cells..., h, dt, t, mask_id`` then ``u`` and ``v`` as ``<f8``."""
    shape = state.u.shape
    head = struct.pack("<4sII", MAGIC, VERSION, len(shape))
    head += struct.pack(f"<{len(shape)}I", *shape)
    head += struct.pack("<dddq", h, dt, state.t, state.mask_id)
    body = np.ascontiguousarray(state.u, dtype="<f8").tobytes() + \
        np.ascontiguousarray(state.v, dtype="<f8").tobytes()
    return head + body


def write_snapshot(path: str, state: WaveState, h: float, dt: float) -> None:
    _atomic_write(path, encode_snapshot(state, h, dt))


def decode_snapshot(data: bytes) -> tuple[SnapshotHeader, WaveState]:
    if len(data) < 12 or data[:4] != MAGIC:
        raise SnapshotError("not a wave snapshot (bad magic)")
    _, version, n = struct.unpack_from("<4sII", data, 0)
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    if n not in (1, 2, 3):
        raise SnapshotError(f"bad dimension {n}")
    off = 12
    cells = struct.unpack_from(f"<{n}I", data, off)
    off += 4 * n
    h, dt, t, mask_id = struct.unpack_from("<dddq", data, off)
    off += 32
    count = int(np.prod(cells))
    if len(data) != off + 16 * count:
        raise SnapshotError("snapshot payload size does not match its header")
    arr = np.frombuffer(data, dtype="<f8", count=2 * count, offset=off).astype(float)
    u = arr[:count].reshape(cells)
    v = arr[count:].reshape(cells)
    step = int(round(t / dt)) if dt > 0 else 0
    header = SnapshotHeader(version, n, tuple(cells), h, dt, t, mask_id)
    return header, WaveState(u, v, t, step, mask_id)


def read_snapshot(path: str) -> tuple[SnapshotHeader, WaveState]:
    with open(path, "rb") as fh:
        return decode_snapshot(fh.read())


ENERGY_COLUMNS = ("t", "E_total", "E_local", "norm_variant")


def energy_trace_csv(rows: Iterable[tuple]) -> str:
    """Rows ``(t, E_total, E_local, variant)`` as CSV text with 17 significant digits."""
    lines = [",".join(ENERGY_COLUMNS)]
    for t, total, local, variant in rows:
        lines.append(f"{t:.17g},{total:.17g},{local:.17g},{variant}")
    return "\n".join(lines) + "\n"
