"""Volume I/O, cubic resampling, and tri-planar slice geometry.

Grids are stored as numpy arrays in (z, y, x) index order, row-major.
The three anatomical views map bijectively onto the grid axes:

    axial     slices of constant z   in-plane rows = y, cols = x
    coronal   slices of constant y   in-plane rows = z, cols = x
    sagittal  slices of constant x   in-plane rows = z, cols = y

``assemble_volume`` inverts ``extract_slices`` under the same convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

MVOL_MAGIC = b"MVOL0001"


class MvolError(Exception):
    """Base class for MVOL file format errors."""


class MvolBadMagicError(MvolError):
    """File does not start with the MVOL magic bytes."""


class MvolTruncatedError(MvolError):
    """File ends before the declared header or payload is complete."""


class MvolSizeMismatchError(MvolError):
    """Payload length disagrees with the dims declared in the header."""


class MvolUnknownDtypeError(MvolError):
    """Header declares a dtype this reader does not understand."""


class ContrastMode(str, Enum):
    T1 = "t1"
    T2 = "t2"
    UNKNOWN = "unknown"


class ViewAxis(str, Enum):
    """Tri-planar view, each owning one grid axis."""

    AXIAL = "axial"
    CORONAL = "coronal"
    SAGITTAL = "sagittal"

    @property
    def axis(self) -> int:
        return {"axial": 0, "coronal": 1, "sagittal": 2}[self.value]


@dataclass
class Volume:
    """3D scalar grid with physical spacing and a contrast tag."""

    data: np.ndarray
    spacing_mm: tuple[float, float, float]
    contrast_mode: ContrastMode = ContrastMode.UNKNOWN

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if self.data.ndim != 3 or any(d < 1 for d in self.data.shape):
            raise ValueError(f"volume must be 3D with all dims >= 1, got shape {self.data.shape}")
        if len(self.spacing_mm) != 3 or any(s <= 0 for s in self.spacing_mm):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing_mm}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains non-finite values")
        self.contrast_mode = ContrastMode(self.contrast_mode)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def is_cubic(self) -> bool:
        z, y, x = self.data.shape
        return z == y == x


@dataclass
class Mask:
    """Binary 3D grid aligned to a Volume."""

    data: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {self.data.shape}")
        uniq = np.unique(self.data)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ValueError(f"mask values must be 0/1, got {uniq[:8]}")
        self.data = self.data.astype(np.uint8)
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 3 or any(s <= 0 for s in self.spacing_mm):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing_mm}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def voxel_count(self) -> int:
        return int(self.data.sum())


def _resample_axis_linear(data: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    """Linear interpolation along one axis at voxel centers, clamp to edge."""
    n_in = data.shape[axis]
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    lo = np.floor(centers).astype(np.int64)
    frac = (centers - lo).astype(np.float64)
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    a = np.take(data, lo_c, axis=axis).astype(np.float64)
    b = np.take(data, hi_c, axis=axis).astype(np.float64)
    shape = [1] * data.ndim
    shape[axis] = n_out
    w = frac.reshape(shape)
    return a * (1.0 - w) + b * w


def _resample_axis_nearest(data: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = data.shape[axis]
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    idx = np.clip(np.floor(centers + 0.5).astype(np.int64), 0, n_in - 1)
    return np.take(data, idx, axis=axis)


def resample_cubic(v: Volume | Mask, n: int, interpolation: str | None = None) -> Volume | Mask:
    """Resample a volume or mask to an n-cubed grid, preserving physical extent.

    Trilinear (separable per-axis linear) interpolation for intensities,
    nearest neighbor for masks. Sampling points sit at voxel centers;
    out-of-range taps clamp to the edge voxel.
    """
    if n < 2:
        raise ValueError(f"target size must be >= 2, got {n}")
    if interpolation is None:
        interpolation = "nearest" if isinstance(v, Mask) else "trilinear"
    if interpolation not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    data = v.data
    if not np.all(np.isfinite(data)):
        raise ValueError("cannot resample non-finite data")
    extent = tuple(d * s for d, s in zip(data.shape, v.spacing_mm))
    out_spacing = tuple(e / n for e in extent)
    out = data
    for axis in range(3):
        if interpolation == "trilinear":
            out = _resample_axis_linear(out, axis, n)
        else:
            out = _resample_axis_nearest(out, axis, n)
    if isinstance(v, Mask):
        return Mask(out.astype(np.uint8), out_spacing)
    return Volume(out.astype(np.float32), out_spacing, v.contrast_mode)


def _as_grid(obj) -> np.ndarray:
    if isinstance(obj, (Volume, Mask)):
        return obj.data
    return np.asarray(obj)


def extract_slices(obj, view: ViewAxis) -> list[np.ndarray]:
    """Split a cubic grid into n 2D slices along the view's axis."""
    data = _as_grid(obj)
    if data.ndim != 3:
        raise ValueError(f"expected 3D grid, got shape {data.shape}")
    z, y, x = data.shape
    if not (z == y == x):
        raise ValueError(f"expected cubic grid, got shape {data.shape}")
    view = ViewAxis(view)
    moved = np.moveaxis(data, view.axis, 0)
    return [np.ascontiguousarray(moved[i]) for i in range(moved.shape[0])]


def assemble_volume(slices, view: ViewAxis, spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> Mask:
    """Stack binary 2D label slices back into a Mask; inverse of extract_slices."""
    view = ViewAxis(view)
    arrs = [np.asarray(s) for s in slices]
    if not arrs:
        raise ValueError("no slices given")
    n = len(arrs)
    for a in arrs:
        if a.shape != (n, n):
            raise ValueError(f"expected {n} slices of shape {(n, n)}, got {a.shape}")
    stacked = np.stack(arrs, axis=0)
    data = np.moveaxis(stacked, 0, view.axis)
    return Mask(data, spacing_mm)


def write_mvol(v: Volume | Mask, path) -> None:
    """Write a volume or mask in the MVOL format (bit-exact round trip)."""
    path = Path(path)
    if isinstance(v, Mask):
        dtype, contrast = "u8", "unknown"
        payload = np.ascontiguousarray(v.data, dtype="<u1")
    elif isinstance(v, Volume):
        dtype, contrast = "f32", v.contrast_mode.value
        payload = np.ascontiguousarray(v.data, dtype="<f4")
    else:
        raise TypeError(f"expected Volume or Mask, got {type(v).__name__}")
    header = {
        "dims": list(v.data.shape),
        "spacing_mm": list(v.spacing_mm),
        "dtype": dtype,
        "order": "zyx-row-major",
        "contrast": contrast,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MVOL_MAGIC)
        f.write(np.uint32(len(hdr)).astype("<u4").tobytes())
        f.write(hdr)
        f.write(payload.tobytes())


def read_mvol(path) -> Volume | Mask:
    """Read an MVOL file; returns a Mask for u8 payloads, a Volume for f32."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MVOL_MAGIC) + 4:
        raise MvolTruncatedError(f"{path}: file shorter than magic + header length")
    if raw[: len(MVOL_MAGIC)] != MVOL_MAGIC:
        raise MvolBadMagicError(f"{path}: bad magic {raw[:8]!r}")
    off = len(MVOL_MAGIC)
    (hlen,) = np.frombuffer(raw[off : off + 4], dtype="<u4")
    off += 4
    if len(raw) < off + int(hlen):
        raise MvolTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(raw[off : off + int(hlen)].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MvolError(f"{path}: unreadable header: {e}") from e
    off += int(hlen)
    dims = tuple(int(d) for d in header["dims"])
    spacing = tuple(float(s) for s in header["spacing_mm"])
    dtype = header["dtype"]
    if dtype == "f32":
        np_dtype, itemsize = "<f4", 4
    elif dtype == "u8":
        np_dtype, itemsize = "<u1", 1
    else:
        raise MvolUnknownDtypeError(f"{path}: unknown dtype {dtype!r}")
    n_elem = int(np.prod(dims))
    expected = n_elem * itemsize
    got = len(raw) - off
    if got < expected:
        raise MvolTruncatedError(f"{path}: payload has {got} bytes, need {expected}")
    if got != expected:
        raise MvolSizeMismatchError(f"{path}: payload has {got} bytes, header implies {expected}")
    data = np.frombuffer(raw[off:], dtype=np_dtype).reshape(dims)
    if dtype == "u8":
        return Mask(data.copy(), spacing)
    return Volume(data.copy(), spacing, ContrastMode(header.get("contrast", "unknown")))
