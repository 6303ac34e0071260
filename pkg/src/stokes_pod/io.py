"""Binary field containers and CSV helpers.

Container layout (little-endian throughout)::

    offset  type          content
    0       4 bytes       magic b"SPPD"
    4       u32           format version (1)
    8       u32           kind code (see KIND_CODES)
    12      u32           mesh parameter N
    16      f64           time step dt
    24      u32, u32      window n0, M
    32      u32           n_dofs
    36      u32           n_columns
    40      u32[n_cols]   column labels (step index, or mode index)
    ...     f64[n_cols]   column scalars (time, or eigenvalue)
    ...     f64[n_dofs*n_cols]  coefficient blocks, one contiguous column each
    ...     u32           n_extra
    ...     f64[n_extra]  extra payload

For POD bases the extra payload is ``[rank_threshold, orthonormality_error,
spectrum (N_s values), eigenvector coefficients (N_s x d, column-major)]``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "VERSION",
    "KIND_CODES",
    "FieldFile",
    "FormatError",
    "write_field_file",
    "read_field_file",
    "write_trajectory",
    "read_trajectory",
    "write_basis",
    "read_basis",
    "write_csv",
    "read_csv",
    "fmt",
]

MAGIC = b"SPPD"
VERSION = 1
KIND_CODES = {"velocity": 0, "pressure": 1, "end_velocity": 2,
              "velocity_basis": 16, "pressure_basis": 17}
_KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
_HEADER = struct.Struct("<4sIIIdIIII")


class FormatError(ValueError):
    """A container file is malformed."""


@dataclass(frozen=True, eq=False)
class FieldFile:
    """In-memory image of one container; ``data`` is ``(n_dofs, n_columns)``."""

    kind: str
    N: int
    dt: float
    window: tuple
    labels: np.ndarray
    scalars: np.ndarray
    data: np.ndarray
    extra: np.ndarray

    def column(self, label: int) -> np.ndarray:
        k = np.flatnonzero(self.labels == label)
        if k.size == 0:
            raise KeyError(f"column {label} not present")
        return self.data[:, k[0]]


def write_field_file(path, ff: FieldFile) -> Path:
    path = Path(path)
    data = np.asarray(ff.data, dtype="<f8")
    n_dofs, n_cols = data.shape
    labels = np.asarray(ff.labels, dtype="<u4")
    scalars = np.asarray(ff.scalars, dtype="<f8")
    extra = np.asarray(ff.extra, dtype="<f8").ravel()
    if labels.shape != (n_cols,) or scalars.shape != (n_cols,):
        raise ValueError("labels and scalars need one entry per column")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, KIND_CODES[ff.kind], int(ff.N), float(ff.dt),
                              int(ff.window[0]), int(ff.window[1]), n_dofs, n_cols))
        fh.write(labels.tobytes())
        fh.write(scalars.tobytes())
        fh.write(data.tobytes(order="F"))
        fh.write(struct.pack("<I", extra.size))
        fh.write(extra.tobytes())
    return path


def read_field_file(path) -> FieldFile:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file too short")
    magic, version, code, N, dt, n0, M, n_dofs, n_cols = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError("bad magic bytes")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if code not in _KIND_NAMES:
        raise FormatError(f"unknown kind code {code}")
    off = _HEADER.size
    try:
        labels = np.frombuffer(raw, "<u4", n_cols, off).astype(np.int64)
        off += 4 * n_cols
        scalars = np.frombuffer(raw, "<f8", n_cols, off).astype(float)
        off += 8 * n_cols
        data = np.frombuffer(raw, "<f8", n_dofs * n_cols, off).reshape(
            (n_dofs, n_cols), order="F").astype(float)
        off += 8 * n_dofs * n_cols
        (n_extra,) = struct.unpack_from("<I", raw, off)
        off += 4
        extra = np.frombuffer(raw, "<f8", n_extra, off).astype(float)
        off += 8 * n_extra
    except (ValueError, struct.error) as exc:
        raise FormatError(f"truncated file: {exc}") from None
    if off != len(raw):
        raise FormatError("trailing bytes after payload")
    return FieldFile(_KIND_NAMES[code], N, dt, (n0, M), labels, scalars, data, extra)


def write_trajectory(path, trajectory, kind: str = "velocity") -> Path:
    """Store the fields a :class:`~stokes_pod.fom.FomTrajectory` kept."""
    arrays = {"velocity": trajectory.u_tilde, "pressure": trajectory.p,
              "end_velocity": trajectory.u_end}
    data = arrays[kind]
    if data is None:
        raise ValueError(f"trajectory has no {kind} fields")
    steps = trajectory.stored_steps
    cfg = trajectory.config
    ff = FieldFile(kind, cfg.N, cfg.dt, cfg.record_window, steps,
                   trajectory.times[steps], data.T, np.zeros(0))
    return write_field_file(path, ff)


def read_trajectory(path) -> FieldFile:
    ff = read_field_file(path)
    if ff.kind not in ("velocity", "pressure", "end_velocity"):
        raise FormatError(f"{path} holds a {ff.kind}, not a trajectory")
    return ff


def write_basis(path, basis, N: int, dt: float, window) -> Path:
    d = basis.d
    extra = np.concatenate([[basis.rank_threshold, basis.orthonormality_error],
                            basis.spectrum, np.asarray(basis.coefficients).ravel(order="F")])
    ff = FieldFile(f"{basis.kind}_basis", N, dt, window, np.arange(d),
                   basis.eigenvalues, basis.modes, extra)
    return write_field_file(path, ff)


def read_basis(path):
    """Return ``(PodBasis, FieldFile)``."""
    from .pod import PodBasis

    ff = read_field_file(path)
    if not ff.kind.endswith("_basis"):
        raise FormatError(f"{path} holds a {ff.kind}, not a basis")
    d = ff.data.shape[1]
    n_s = (ff.extra.size - 2) // (d + 1)
    if 2 + n_s * (d + 1) != ff.extra.size:
        raise FormatError("inconsistent basis payload")
    spectrum = ff.extra[2:2 + n_s]
    coeffs = ff.extra[2 + n_s:].reshape((n_s, d), order="F")
    basis = PodBasis(ff.kind[:-len("_basis")], ff.data, ff.scalars, spectrum, coeffs,
                     float(ff.extra[0]), float(ff.extra[1]))
    return basis, ff


# ---------------------------------------------------------------------------
# CSV

def fmt(v) -> str:
    """Shortest round-trip text for numbers, empty for None/NaN."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    """Return ``(header, rows)`` with every cell as text."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path} is empty")
    return rows[0], rows[1:]
