"""
Run outputs: binary field snapshots, CSV ledgers, run manifest.

Snapshot layout (little-endian)::

    b"SSCL"  u16 version  u16 dim  u32 N_1 [u32 N_2]  f64 time  u8 dtype  payload

The payload is the field in row-major order as f64 (dtype tag 1).
"""

from __future__ import annotations

import csv
import json
import platform
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSCL"
VERSION = 1
DTYPE_F64 = 1


class FormatError(ValueError):
    pass


def encode_snapshot(u: np.ndarray, t: float) -> bytes:
    u = np.asarray(u)
    if u.ndim not in (1, 2):
        raise FormatError(f"io: snapshot must be 1D or 2D, got shape {u.shape}")
    head = MAGIC + struct.pack("<HH", VERSION, u.ndim) + struct.pack(f"<{u.ndim}I", *u.shape)
    head += struct.pack("<dB", float(t), DTYPE_F64)
    return head + np.ascontiguousarray(u, dtype="<f8").tobytes()


def decode_snapshot(buf: bytes) -> tuple[float, np.ndarray]:
    if buf[:4] != MAGIC:
        raise FormatError("io: bad magic bytes, not an SSCL snapshot")
    version, dim = struct.unpack_from("<HH", buf, 4)
    if version != VERSION:
        raise FormatError(f"io: unsupported snapshot version {version}")
    if dim not in (1, 2):
        raise FormatError(f"io: bad snapshot dimension {dim}")
    off = 8
    shape = struct.unpack_from(f"<{dim}I", buf, off)
    off += 4 * dim
    t, tag = struct.unpack_from("<dB", buf, off)
    off += 9
    if tag != DTYPE_F64:
        raise FormatError(f"io: unsupported payload dtype tag {tag}")
    n = int(np.prod(shape))
    if len(buf) - off != 8 * n:
        raise FormatError(f"io: payload has {len(buf) - off} bytes, expected {8 * n}")
    u = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(float)
    return t, u


def write_snapshot(path, u, t):
    Path(path).write_bytes(encode_snapshot(u, t))


def read_snapshot(path):
    return decode_snapshot(Path(path).read_bytes())


def write_csv(path, header, rows):
    """CSV with repr-formatted floats so values round-trip exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_ledger(path, times, values):
    """Per-step ledger: ``step, t, value`` where ``t`` is the step's start time."""
    write_csv(path, ["step", "t", "value"], ((n, float(times[n]), float(v)) for n, v in enumerate(values)))


def versions() -> dict:
    from . import __version__
    import matplotlib

    return {"sscl": __version__, "numpy": np.__version__, "matplotlib": matplotlib.__version__,
            "python": platform.python_version()}


def write_manifest(path, data: dict):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_manifest(run_dir) -> dict:
    p = Path(run_dir) / "manifest.json"
    if not p.is_file():
        raise FileNotFoundError(f"io: no run manifest in {run_dir}")
    return json.loads(p.read_text())
