"""Binary and CSV containers for lattice fields, plus atomic file writes.

Binary layout (little endian): magic ``b"LLAB"``, version u32, N u32, L f64,
kind u8, then the row-major f64 payload. The payload shape follows from
``kind`` and N.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile

import numpy as np

MAGIC = b"LLAB"
VERSION = 1
_HEADER = struct.Struct("<4sIIdB")

# kind code -> payload shape as a function of N
KINDS = {
    0: ("site", lambda N: (N, N)),
    1: ("x_edge", lambda N: (N + 1, N)),
    2: ("y_edge", lambda N: (N, N + 1)),
    3: ("plaquette", lambda N: (N + 1, N + 1)),
}
KIND_CODES = {name: code for code, (name, _) in KINDS.items()}


def atomic_write(path, data: bytes | str):
    """Write to a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_field(values: np.ndarray, L: float, kind: str = "site") -> bytes:
    if kind not in KIND_CODES:
        raise ValueError(f"unknown field kind {kind!r}")
    code = KIND_CODES[kind]
    v = np.asarray(values)
    if np.iscomplexobj(v):
        raise ValueError("only real fields can be serialized")
    if v.ndim != 2:
        raise ValueError("fields are two-dimensional arrays")
    N = {"site": v.shape[0], "x_edge": v.shape[1], "y_edge": v.shape[0],
         "plaquette": v.shape[0] - 1}[kind]
    if v.shape != KINDS[code][1](N):
        raise ValueError(f"shape {v.shape} does not match kind {kind!r}")
    head = _HEADER.pack(MAGIC, VERSION, N, float(L), code)
    return head + np.ascontiguousarray(v, dtype="<f8").tobytes()


def decode_field(blob: bytes):
    """Inverse of encode_field; returns ``(values, L, kind)``."""
    if len(blob) < _HEADER.size:
        raise ValueError("truncated header")
    magic, version, N, L, code = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError("bad magic")
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    if code not in KINDS:
        raise ValueError(f"unknown kind code {code}")
    name, shape_of = KINDS[code]
    shape = shape_of(N)
    payload = blob[_HEADER.size:]
    if len(payload) != 8 * shape[0] * shape[1]:
        raise ValueError("payload length does not match header")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(float), L, name


def save_field(path, values: np.ndarray, L: float, kind: str = "site"):
    atomic_write(path, encode_field(values, L, kind))


def load_field(path):
    with open(path, "rb") as f:
        return decode_field(f.read())


def field_to_csv(values: np.ndarray) -> str:
    """Rows ``j,k,value`` with 1-based lattice indices."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["j", "k", "value"])
    v = np.asarray(values, dtype=float)
    for j in range(v.shape[0]):
        for k in range(v.shape[1]):
            w.writerow([j + 1, k + 1, repr(float(v[j, k]))])
    return buf.getvalue()
