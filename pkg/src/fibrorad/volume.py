"""Volumetric image model, MetaImage I/O, isotropic resampling and HU clipping."""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ContrastPhase",
    "Volume",
    "VolumeFormatError",
    "read_volume",
    "write_volume",
    "resample_trilinear",
    "resample_region",
    "clip_hu",
]


class VolumeFormatError(ValueError):
    pass


class ContrastPhase(enum.Enum):
    NC = "NC"
    CE = "CE"

    @property
    def clip_range(self) -> tuple[float, float]:
        return _CLIP_RANGES[self]


_CLIP_RANGES = {
    ContrastPhase.NC: (0.0, 100.0),
    ContrastPhase.CE: (-10.0, 200.0),
}


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid indexed ``voxels[x, y, z]``.

    ``origin`` is the physical position (mm) of the center of voxel (0, 0, 0),
    following the MetaImage ``Offset`` convention.
    """

    voxels: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.voxels)
        if arr.ndim != 3:
            raise ValueError(f"volume must be 3D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"zero-sized dimension in {arr.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise ValueError("spacing and origin need three components")
        if not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        if arr.dtype != bool and not np.all(np.isfinite(arr)):
            raise ValueError("volume contains non-finite values")
        if arr.dtype != bool:
            arr = arr.astype(np.float64, copy=True)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "voxels", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.voxels.shape)

    def positions(self, axis: int) -> np.ndarray:
        """Physical coordinates (mm) of voxel centers along ``axis``."""
        return self.origin[axis] + self.spacing[axis] * np.arange(self.dims[axis])

    def with_voxels(self, voxels: np.ndarray) -> "Volume":
        return Volume(voxels, self.spacing, self.origin)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and self.voxels.shape == other.voxels.shape
            and np.array_equal(self.voxels, other.voxels)
        )

    __hash__ = None


# --- MetaImage I/O -------------------------------------------------------

_ELEMENT_TYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_UCHAR": np.dtype("u1"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
}
_REQUIRED_KEYS = ("NDims", "DimSize", "ElementSpacing", "ElementType", "ElementDataFile")


def _parse_header(text: str) -> dict[str, str]:
    header = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise VolumeFormatError(f"garbled header line {lineno}: {line!r}")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    missing = [k for k in _REQUIRED_KEYS if k not in header]
    if missing:
        raise VolumeFormatError(f"missing header keys: {', '.join(missing)}")
    return header


def _floats(value: str, key: str, n: int = 3) -> list[float]:
    try:
        out = [float(tok) for tok in value.split()]
    except ValueError as exc:
        raise VolumeFormatError(f"garbled {key}: {value!r}") from exc
    if len(out) != n:
        raise VolumeFormatError(f"{key} needs {n} values, got {value!r}")
    return out


def read_volume(path: str | os.PathLike) -> Volume:
    """Read a ``.mhd`` header plus its raw data file.

    Boolean masks are stored as ``MET_UCHAR`` and come back as ``bool`` grids.
    """
    path = Path(path)
    header = _parse_header(path.read_text())
    if header["NDims"] != "3":
        raise VolumeFormatError(f"only NDims = 3 is supported, got {header['NDims']}")
    dims = [int(d) for d in _floats(header["DimSize"], "DimSize")]
    if min(dims) < 1:
        raise VolumeFormatError(f"zero-sized dimension in DimSize {dims}")
    spacing = _floats(header["ElementSpacing"], "ElementSpacing")
    origin = _floats(header.get("Offset", "0 0 0"), "Offset")
    etype = header["ElementType"]
    if etype not in _ELEMENT_TYPES:
        raise VolumeFormatError(f"unsupported element type {etype}")
    dtype = _ELEMENT_TYPES[etype]

    raw_path = path.parent / header["ElementDataFile"]
    data = np.fromfile(raw_path, dtype=dtype)
    expected = dims[0] * dims[1] * dims[2]
    if data.size != expected:
        raise VolumeFormatError(
            f"buffer length mismatch: expected {expected} voxels, found {data.size}"
        )
    # x-fastest on disk
    voxels = data.reshape(dims[::-1]).transpose(2, 1, 0)
    if etype == "MET_UCHAR":
        voxels = voxels.astype(bool)
    return Volume(voxels, tuple(spacing), tuple(origin))


def _pick_element_type(voxels: np.ndarray) -> str:
    if voxels.dtype == bool:
        return "MET_UCHAR"
    lo, hi = np.iinfo(np.int16).min, np.iinfo(np.int16).max
    if np.all(voxels == np.round(voxels)) and voxels.min() >= lo and voxels.max() <= hi:
        return "MET_SHORT"
    return "MET_DOUBLE"


def write_volume(v: Volume, path: str | os.PathLike) -> None:
    """Write ``v`` as ``<path>`` (header) and ``<stem>.raw`` (data).

    Integer-valued HU grids are written as little-endian int16; anything else
    falls back to float64 so that read/write round-trips exactly.
    """
    path = Path(path)
    if min(v.voxels.shape) < 1:
        raise ValueError("cannot write a volume with a zero-sized dimension")
    etype = _pick_element_type(v.voxels)
    raw_name = path.with_suffix(".raw").name
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "DimSize = " + " ".join(str(n) for n in v.dims),
        "ElementSpacing = " + " ".join(repr(s) for s in v.spacing),
        "Offset = " + " ".join(repr(o) for o in v.origin),
        f"ElementType = {etype}",
        f"ElementDataFile = {raw_name}",
    ]
    data = np.asarray(v.voxels).transpose(2, 1, 0).astype(_ELEMENT_TYPES[etype])
    path.parent.mkdir(parents=True, exist_ok=True)
    data.tofile(path.parent / raw_name)
    path.write_text("\n".join(lines) + "\n")


def read_header(path: str | os.PathLike) -> tuple[tuple[int, ...], tuple[float, ...], tuple[float, ...]]:
    """Dims, spacing and origin from a header without touching the raw file."""
    header = _parse_header(Path(path).read_text())
    dims = tuple(int(d) for d in _floats(header["DimSize"], "DimSize"))
    spacing = tuple(_floats(header["ElementSpacing"], "ElementSpacing"))
    origin = tuple(_floats(header.get("Offset", "0 0 0"), "Offset"))
    return dims, spacing, origin


# --- resampling ----------------------------------------------------------

def _output_dims(v: Volume, target: float) -> tuple[int, int, int]:
    # small slack so that e.g. 3 * 0.5 / 0.5 does not round up to 4
    return tuple(
        max(1, int(math.ceil(n * s / target - 1e-9))) for n, s in zip(v.dims, v.spacing)
    )


def _lerp_axis(arr: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    c = np.clip(coords, 0.0, n - 1)
    i0 = np.floor(c).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = c - i0
    shape = [1, 1, 1]
    shape[axis] = -1
    frac = frac.reshape(shape)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    # a + f*(b - a) keeps constant inputs bit-exact
    return a + frac * (b - a)


def resample_region(
    v: Volume,
    target_spacing: float,
    lo_mm: tuple[float, float, float] | None = None,
    hi_mm: tuple[float, float, float] | None = None,
) -> Volume:
    """Resample the part of the isotropic output grid lying inside a box.

    The output grid shares ``v.origin`` and has ``ceil(extent / target)`` voxels
    per axis; only grid points with ``lo_mm <= position <= hi_mm`` are computed,
    so a cropped call returns exactly the matching slab of the full result.
    """
    if not target_spacing > 0:
        raise ValueError(f"target spacing must be positive, got {target_spacing}")
    t = float(target_spacing)
    full = _output_dims(v, t)
    out = np.asarray(v.voxels, dtype=np.float64)
    origin = []
    for axis in range(3):
        start, stop = 0, full[axis]
        if lo_mm is not None:
            start = max(0, int(math.ceil((lo_mm[axis] - v.origin[axis]) / t - 1e-9)))
        if hi_mm is not None:
            stop = min(full[axis], int(math.floor((hi_mm[axis] - v.origin[axis]) / t + 1e-9)) + 1)
        if stop <= start:
            raise ValueError("requested region does not intersect the volume")
        idx = np.arange(start, stop)
        coords = idx * t / v.spacing[axis]
        out = _lerp_axis(out, coords, axis)
        origin.append(v.origin[axis] + start * t)
    return Volume(out, (t, t, t), tuple(origin))


def resample_trilinear(v: Volume, target_spacing: float = 0.5) -> Volume:
    """Trilinear resampling onto an isotropic grid with clamp-to-edge borders."""
    return resample_region(v, target_spacing)


def clip_hu(v: Volume, phase: ContrastPhase) -> Volume:
    lo, hi = phase.clip_range
    return v.with_voxels(np.clip(v.voxels, lo, hi))
