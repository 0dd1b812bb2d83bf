"""SPF1 snapshot files: one unbatched spectral field plus a JSON sidecar.

Layout (little-endian)::

    b"SPF1"        magic; the last byte doubles as the format version
    u32 N
    f64 L
    f64 t          simulation time of the snapshot
    f64[2, N, N, 2] coefficients as (re, im) pairs, component-major,
                   then rows and columns in FFT index order

The sidecar ``<path>.json`` carries nu, alpha, seed and the step index.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .spectral import Lattice, SpectralField, make_lattice

__all__ = ["SnapshotError", "write_snapshot", "read_snapshot", "atomic_write_bytes"]

MAGIC = b"SPF"
VERSION = b"1"
_HEADER = struct.Struct("<4sIdd")


class SnapshotError(ValueError):
    """Unreadable or mismatched snapshot; ``kind`` names the failure."""

    def __init__(self, kind: str, message: str, path=None):
        self.kind = kind
        self.path = None if path is None else str(path)
        super().__init__(message)

    def to_dict(self) -> dict:
        return {"error": "snapshot", "kind": self.kind, "message": str(self), "path": self.path}


def atomic_write_bytes(path, data: bytes) -> None:
    """Write through a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def encode(field: SpectralField, t: float = 0.0) -> bytes:
    if field.batch_shape:
        raise ValueError("snapshots hold a single field; index the batch first")
    lat = field.lattice
    head = _HEADER.pack(MAGIC + VERSION, lat.n_modes, lat.box_length, float(t))
    body = np.ascontiguousarray(field.coeffs, dtype="<c16").tobytes()
    return head + body


def decode(data: bytes, path=None) -> tuple[SpectralField, float]:
    if len(data) < _HEADER.size:
        raise SnapshotError("truncated", f"header needs {_HEADER.size} bytes, file has {len(data)}", path)
    magic, n, box, t = _HEADER.unpack_from(data)
    if magic[:3] != MAGIC:
        raise SnapshotError("bad_magic", f"expected magic {MAGIC + VERSION!r}, found {magic!r}", path)
    if magic[3:] != VERSION:
        raise SnapshotError("bad_version", f"unsupported SPF version {magic[3:]!r}", path)
    need = _HEADER.size + 2 * n * n * 16
    if len(data) != need:
        kind = "truncated" if len(data) < need else "trailing_bytes"
        raise SnapshotError(kind, f"N={n} needs {need} bytes, file has {len(data)}", path)
    try:
        lat = make_lattice(n, box)
    except ValueError as exc:
        raise SnapshotError("bad_header", str(exc), path) from None
    coeffs = np.frombuffer(data, dtype="<c16", offset=_HEADER.size).reshape(2, n, n).astype(complex)
    return SpectralField(lat, coeffs), float(t)


def write_snapshot(field: SpectralField, meta: dict, path, t: float = 0.0) -> None:
    """Write the binary snapshot and its sidecar, both atomically."""
    path = Path(path)
    atomic_write_bytes(path, encode(field, t))
    side = {"nu": None, "alpha": None, "seed": None, "step": None}
    side.update(meta)
    atomic_write_bytes(_sidecar(path), (json.dumps(side, sort_keys=True, indent=2) + "\n").encode())


def read_snapshot(path, lattice: Lattice | None = None) -> tuple[SpectralField, dict]:
    """Return (field, meta); meta includes ``t`` from the header.

    With ``lattice`` given, a file on a different lattice is an error.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise SnapshotError("missing", f"no snapshot at {path}", path) from None
    field, t = decode(data, path)
    if lattice is not None and field.lattice != lattice:
        raise SnapshotError("lattice_mismatch", f"file lattice {field.lattice} != expected {lattice}", path)
    side = _sidecar(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    meta["t"] = t
    return field, meta
