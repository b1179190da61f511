"""Binary trajectory files and CSV decay tables."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .sphere import SphereBasis
from .trajectory import TimeGrid, Trajectory

__all__ = ["MAGIC", "VERSION", "HEADER_SIZE", "save_trajectory", "load_trajectory", "write_csv", "FormatError"]

MAGIC = b"EXSC"
VERSION = 1
HEADER_SIZE = 64
# magic, version, d, s, lmax, ncomp, nodes, t0, dt, oversample, has_phi, reserved
_HEADER = struct.Struct("<4sIIdIIQddII4x")
assert _HEADER.size == HEADER_SIZE


class FormatError(ValueError):
    """Malformed or incompatible trajectory file."""


def save_trajectory(path, T, s):
    """Write ``T`` with a 64-byte header followed by little-endian float64 data.

    Node-major: each node stores its ``v`` block then its ``phi`` block, each
    component-major and mode-ascending.
    """
    b = T.basis
    has_phi = T.phi is not None
    head = _HEADER.pack(
        MAGIC, VERSION, b.d, float(s), b.lmax, T.ncomp, T.grid.n,
        float(T.grid.t0), float(T.grid.dt), b.oversample, int(has_phi),
    )
    blocks = [T.v, T.phi] if has_phi else [T.v]
    body = np.stack(blocks, axis=1).astype("<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(body.tobytes(order="C"))


def load_trajectory(path):
    """Read a file written by :func:`save_trajectory`.

    Returns
    -------
    Trajectory
    float
        The Sobolev index stored in the header.
    """
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"truncated header: {len(raw)} of {HEADER_SIZE} bytes")
    magic, version, d, s, lmax, ncomp, n, t0, dt, oversample, has_phi = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} (expected {VERSION})")
    basis = SphereBasis(d, lmax, oversample)
    nblk = 2 if has_phi else 1
    count = n * nblk * ncomp * basis.nmodes
    need = HEADER_SIZE + 8 * count
    if len(raw) != need:
        kind = "truncated" if len(raw) < need else "oversized"
        raise FormatError(
            f"{kind} file: data ends at byte offset {len(raw)}, expected {need} "
            f"({n} nodes x {nblk} blocks x {ncomp} x {basis.nmodes} values)"
        )
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=HEADER_SIZE)
    data = data.reshape(n, nblk, ncomp, basis.nmodes).astype(float)
    grid = TimeGrid(t0, dt, n)
    phi = data[:, 1].copy() if has_phi else None
    return Trajectory(grid, basis, data[:, 0].copy(), phi), s


def write_csv(path, header, columns):
    """Comma-separated table with 17 significant digits."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join("%.17g" % x for x in row) + "\n")
