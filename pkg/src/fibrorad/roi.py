"""Spherical ROI geometry, masking, and the biopsy / non-biopsy placement rules."""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .volume import Volume

__all__ = [
    "RoiKind",
    "SphereRoi",
    "LiverMask",
    "RoiVoxels",
    "RoiError",
    "sphere_mask",
    "place_biopsy_roi",
    "place_nonbiopsy_roi",
    "shift_to_fit",
    "extract_roi",
    "read_manifest",
    "write_manifest",
]

ROI_RADIUS_MM = 15.0
BIOPSY_DEPTH_MM = 25.0
MIN_SEPARATION_MM = 30.0
MAX_SHIFT_MM = 30.0


class RoiError(ValueError):
    pass


class RoiKind(enum.Enum):
    BIOPSY = "biopsy"
    NONBIOPSY = "nonbiopsy"


@dataclass(frozen=True)
class SphereRoi:
    center: tuple[float, float, float]
    radius: float = ROI_RADIUS_MM
    kind: RoiKind = RoiKind.BIOPSY

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        if len(center) != 3 or not all(math.isfinite(c) for c in center):
            raise ValueError(f"invalid ROI center {self.center}")
        if not self.radius > 0:
            raise ValueError(f"ROI radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))

    def moved(self, delta) -> "SphereRoi":
        return SphereRoi(tuple(np.add(self.center, delta)), self.radius, self.kind)


@dataclass(frozen=True)
class LiverMask:
    grid: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool).copy()
        if grid.ndim != 3:
            raise ValueError("liver mask must be 3D")
        if not grid.any():
            raise ValueError("liver mask has empty foreground")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def from_volume(cls, v: Volume) -> "LiverMask":
        return cls(np.asarray(v.voxels) != 0, v.spacing, v.origin)

    def to_volume(self) -> Volume:
        return Volume(self.grid, self.spacing, self.origin)

    @property
    def dims(self):
        return self.grid.shape

    def check_aligned(self, v: Volume) -> None:
        if self.grid.shape != v.dims or not np.allclose(self.spacing, v.spacing) \
                or not np.allclose(self.origin, v.origin):
            raise ValueError("liver mask is not aligned with the volume grid")


@dataclass(frozen=True)
class RoiVoxels:
    """Voxel sample of an ROI: values, integer grid coords (N x 3) and spacing."""

    values: np.ndarray
    coords: np.ndarray
    source_spacing: tuple[float, float, float]
    flags: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("ROI sample is empty")
        if values.size != coords.shape[0]:
            raise ValueError("values and coords differ in length")
        if np.isnan(values).any():
            raise ValueError("ROI sample contains NaN")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "source_spacing", tuple(float(s) for s in self.source_spacing))

    def __len__(self):
        return self.values.size

    def with_values(self, values, flags=()) -> "RoiVoxels":
        return RoiVoxels(values, self.coords, self.source_spacing, tuple(self.flags) + tuple(flags))


def _grid_geometry(obj):
    return np.asarray(obj.origin), np.asarray(obj.spacing), tuple(obj.voxels.shape if isinstance(obj, Volume) else obj.grid.shape)


def _sphere_box(origin, spacing, dims, roi: SphereRoi):
    """Index slices of the bounding box (clipped to the grid) and the local mask."""
    lo = np.ceil((np.asarray(roi.center) - roi.radius - origin) / spacing - 1e-9).astype(int)
    hi = np.floor((np.asarray(roi.center) + roi.radius - origin) / spacing + 1e-9).astype(int)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.asarray(dims) - 1)
    if np.any(hi < lo):
        raise RoiError("ROI outside volume")
    axes = [origin[a] + spacing[a] * np.arange(lo[a], hi[a] + 1) - roi.center[a] for a in range(3)]
    d2 = axes[0][:, None, None] ** 2 + axes[1][None, :, None] ** 2 + axes[2][None, None, :] ** 2
    local = d2 <= roi.radius ** 2
    if not local.any():
        raise RoiError("ROI outside volume")
    slices = tuple(slice(int(lo[a]), int(hi[a]) + 1) for a in range(3))
    return slices, local


def sphere_mask(v: Volume, roi: SphereRoi) -> np.ndarray:
    """Boolean grid: voxel centers within ``roi.radius`` of the ROI center."""
    origin, spacing, dims = _grid_geometry(v)
    slices, local = _sphere_box(origin, spacing, dims, roi)
    out = np.zeros(dims, dtype=bool)
    out[slices] = local
    return out


def place_biopsy_roi(needle_tip, needle_dir, radius: float = ROI_RADIUS_MM) -> SphereRoi:
    d = np.asarray(needle_dir, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError(f"needle direction must be a unit vector, |dir| = {np.linalg.norm(d)}")
    center = np.asarray(needle_tip, dtype=np.float64) + BIOPSY_DEPTH_MM * d
    return SphereRoi(tuple(center), radius, RoiKind.BIOPSY)


def _fit_centers(mask: LiverMask, radius: float) -> np.ndarray:
    """Voxels whose sphere of ``radius`` keeps every included voxel in the mask.

    Distances run to the nearest background voxel center, with the outside of
    the grid counted as background.
    """
    padded = np.pad(mask.grid, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded, sampling=mask.spacing)[1:-1, 1:-1, 1:-1]
    return dist > radius


def place_nonbiopsy_roi(
    rng: np.random.Generator,
    mask: LiverMask,
    biopsy_center,
    min_dist: float = MIN_SEPARATION_MM,
    radius: float = ROI_RADIUS_MM,
) -> SphereRoi:
    """Uniform draw over voxel centers that keep the sphere inside the liver
    and stay at least ``min_dist`` from the biopsy ROI center."""
    fits = _fit_centers(mask, radius)
    origin = np.asarray(mask.origin)
    spacing = np.asarray(mask.spacing)
    # x-fastest candidate order
    zi, yi, xi = np.nonzero(fits.transpose(2, 1, 0))
    idx = np.stack([xi, yi, zi], axis=1)
    centers = origin + idx * spacing
    far = np.linalg.norm(centers - np.asarray(biopsy_center, dtype=float), axis=1) >= min_dist
    candidates = centers[far]
    if candidates.shape[0] == 0:
        raise RoiError("no valid non-biopsy site")
    pick = candidates[rng.integers(candidates.shape[0])]
    return SphereRoi(tuple(pick), radius, RoiKind.NONBIOPSY)


def _sphere_offsets(roi: SphereRoi, origin, spacing):
    """Absolute (unbounded) voxel indices covered by the sphere."""
    lo = np.ceil((np.asarray(roi.center) - roi.radius - origin) / spacing - 1e-9).astype(int)
    hi = np.floor((np.asarray(roi.center) + roi.radius - origin) / spacing + 1e-9).astype(int)
    axes = [origin[a] + spacing[a] * np.arange(lo[a], hi[a] + 1) - roi.center[a] for a in range(3)]
    d2 = axes[0][:, None, None] ** 2 + axes[1][None, :, None] ** 2 + axes[2][None, None, :] ** 2
    return lo, d2 <= roi.radius ** 2


def _fully_inside(grid: np.ndarray, lo: np.ndarray, local: np.ndarray) -> bool:
    idx = np.argwhere(local) + lo
    dims = np.asarray(grid.shape)
    if np.any(idx < 0) or np.any(idx >= dims):
        return False
    return bool(grid[idx[:, 0], idx[:, 1], idx[:, 2]].all())


def shift_to_fit(roi: SphereRoi, mask: LiverMask, max_shift: float = MAX_SHIFT_MM) -> SphereRoi:
    """Smallest (L-inf, mm) voxel-grid shift that puts the whole sphere in the mask.

    Ties are resolved by the smaller Euclidean shift, then ascending
    ``(dx, dy, dz)``.
    """
    origin = np.asarray(mask.origin)
    spacing = np.asarray(mask.spacing)
    lo, local = _sphere_offsets(roi, origin, spacing)
    if _fully_inside(mask.grid, lo, local):
        return roi

    k = np.floor(max_shift / spacing + 1e-9).astype(int)
    # background indicator over every position the shifted sphere can touch
    win_lo = lo - k
    win_shape = np.asarray(local.shape) + 2 * k
    background = np.ones(tuple(win_shape), dtype=np.float64)
    src_lo = np.maximum(win_lo, 0)
    src_hi = np.minimum(win_lo + win_shape, np.asarray(mask.grid.shape))
    if np.all(src_hi > src_lo):
        dst = tuple(slice(int(a - w), int(b - w)) for a, b, w in zip(src_lo, src_hi, win_lo))
        src = tuple(slice(int(a), int(b)) for a, b in zip(src_lo, src_hi))
        background[dst] = ~mask.grid[src]
    # hits[s] = number of background voxels under the sphere shifted by s - k
    hits = signal.fftconvolve(background, local[::-1, ::-1, ::-1].astype(np.float64), mode="valid")
    feasible = hits < 0.5
    if not feasible.any():
        raise RoiError("ROI cannot be fitted")

    shifts = np.argwhere(feasible) - k
    disp = shifts * spacing
    linf = np.abs(disp).max(axis=1)
    best = linf.min()
    tied = disp[linf <= best + 1e-9]
    l2 = np.round(np.sum(tied ** 2, axis=1), 9)
    order = np.lexsort((tied[:, 2], tied[:, 1], tied[:, 0], l2))
    for cand in tied[order]:
        # FFT rounding guard: confirm on the exact voxel set
        steps = np.round(cand / spacing).astype(int)
        if _fully_inside(mask.grid, lo + steps, local):
            return roi.moved(cand)
    raise RoiError("ROI cannot be fitted")


def extract_roi(v: Volume, roi: SphereRoi) -> RoiVoxels:
    """Masked voxels in x-fastest order."""
    origin, spacing, dims = _grid_geometry(v)
    slices, local = _sphere_box(origin, spacing, dims, roi)
    zi, yi, xi = np.nonzero(local.transpose(2, 1, 0))
    coords = np.stack([xi, yi, zi], axis=1) + np.array([s.start for s in slices])
    values = v.voxels[coords[:, 0], coords[:, 1], coords[:, 2]]
    return RoiVoxels(values, coords, v.spacing)


# --- manifest ------------------------------------------------------------

MANIFEST_FIELDS = ("patient_id", "kind", "cx_mm", "cy_mm", "cz_mm", "radius_mm")


def write_manifest(path: str | os.PathLike, rows: list[tuple[str, SphereRoi]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for pid, roi in rows:
            w.writerow([pid, roi.kind.value, *(repr(c) for c in roi.center), repr(roi.radius)])


def read_manifest(path: str | os.PathLike) -> list[tuple[str, SphereRoi]]:
    out = []
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"ROI manifest lacks columns: {sorted(missing)}")
        for row in reader:
            center = (float(row["cx_mm"]), float(row["cy_mm"]), float(row["cz_mm"]))
            out.append((row["patient_id"], SphereRoi(center, float(row["radius_mm"]), RoiKind(row["kind"]))))
    return out
