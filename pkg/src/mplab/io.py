"""Binary container for states and operators.

Layout::

    b"MPLAB001"                      8-byte magic
    uint64 little-endian             byte length of the JSON header
    UTF-8 JSON                       {"n_sites", "local_dim", "kind", "shape"}
    complex128 little-endian         row-major payload
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidShape
from .tensor_core import DiagonalState, n_sites_for

MAGIC = b"MPLAB001"
KINDS = ("dense", "diagonal")


def encode(array: np.ndarray, local_dim: int = 2, kind: str | None = None) -> bytes:
    array = np.asarray(array)
    if kind is None:
        kind = "diagonal" if array.ndim == 1 else "dense"
    if kind not in KINDS:
        raise InvalidShape(f"unknown container kind {kind!r}")
    n = n_sites_for(array.shape[0], local_dim)
    header = json.dumps(
        {"n_sites": n, "local_dim": int(local_dim), "kind": kind, "shape": list(array.shape)},
        sort_keys=True,
    ).encode("utf-8")
    payload = np.ascontiguousarray(array, dtype="<c16").tobytes(order="C")
    return MAGIC + struct.pack("<Q", len(header)) + header + payload


def decode(blob: bytes):
    """Return ``(array, header)`` from container bytes."""
    if blob[:8] != MAGIC:
        raise InvalidShape("bad magic, not an MPLAB001 container")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    shape = tuple(header["shape"])
    data = np.frombuffer(blob[16 + hlen:], dtype="<c16")
    if data.size != int(np.prod(shape)):
        raise InvalidShape("payload length does not match header shape")
    return data.reshape(shape).astype(complex), header


def save(path, obj, local_dim: int = 2) -> str:
    """Write a dense operator or :class:`DiagonalState`; return the SHA-256."""
    if isinstance(obj, DiagonalState):
        blob = encode(obj.weights, obj.local_dim, "diagonal")
    else:
        blob = encode(obj, local_dim)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path):
    """Read a container; diagonal payloads come back as :class:`DiagonalState`."""
    array, header = decode(Path(path).read_bytes())
    if header["kind"] == "diagonal":
        return DiagonalState(header["n_sites"], header["local_dim"], array.real)
    return array


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
