"""Radiomic feature extraction.

Channels: the normalized ROI (``original``), eight single-level Haar sub-bands
(``wavelet-XYZ``) and three LBP-derived maps (``lbp-3D-m1``, ``lbp-3D-m2``,
``lbp-3D-k``). Every channel yields first-order statistics and GLSZM features,
named ``<filter>_<class>_<Name>``. Shape features are never produced.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .normalize import Normalization, normalize
from .roi import RoiVoxels

__all__ = [
    "FeatureVector",
    "DiscretizedRoi",
    "SizeZoneMatrix",
    "discretize",
    "firstorder",
    "glszm",
    "glszm_features",
    "haar_decompose",
    "wavelet_bank",
    "lbp3d",
    "extract_all",
    "feature_schema",
    "FILTERS",
    "WAVELET_BANDS",
]

N_BINS = 32
WAVELET_BANDS = tuple("".join(t) for t in itertools.product("LH", repeat=3))
LBP_MAPS = ("m1", "m2", "k")
FILTERS = ("original",) + tuple(f"wavelet-{b}" for b in WAVELET_BANDS) + tuple(f"lbp-3D-{m}" for m in LBP_MAPS)

FIRSTORDER_NAMES = (
    "Energy", "Entropy", "InterquartileRange", "Kurtosis", "Maximum", "Mean",
    "MeanAbsoluteDeviation", "Median", "Minimum", "Range", "RootMeanSquared",
    "Skewness", "Uniformity", "Variance",
)
GLSZM_NAMES = (
    "GrayLevelNonUniformity", "HighGrayLevelZoneEmphasis", "LargeAreaEmphasis",
    "SizeZoneNonUniformity", "SmallAreaEmphasis", "SmallAreaHighGrayLevelEmphasis",
    "SmallAreaLowGrayLevelEmphasis", "ZoneEntropy", "ZonePercentage",
)


@dataclass
class FeatureVector:
    values: dict[str, float]
    flags: tuple[str, ...] = field(default=())

    def names(self) -> list[str]:
        return list(self.values)

    def __getitem__(self, key):
        return self.values[key]

    def __len__(self):
        return len(self.values)


def feature_schema() -> list[str]:
    names = []
    for f in FILTERS:
        names += [f"{f}_firstorder_{n}" for n in FIRSTORDER_NAMES]
        names += [f"{f}_glszm_{n}" for n in GLSZM_NAMES]
    return names


# --- discretization ------------------------------------------------------

@dataclass(frozen=True)
class DiscretizedRoi:
    levels: np.ndarray
    ng: int
    coords: np.ndarray


def _bin_levels(values: np.ndarray, bins: int) -> tuple[np.ndarray, int]:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.ones(values.size, dtype=np.int64), 1
    levels = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64) + 1
    return np.clip(levels, 1, bins), bins


def discretize(x: RoiVoxels, bins: int = N_BINS) -> DiscretizedRoi:
    """Equal-width binning over [min, max]; the maximum falls in bin ``bins``."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    levels, ng = _bin_levels(x.values, bins)
    return DiscretizedRoi(levels, ng, x.coords)


# --- first order ---------------------------------------------------------

def firstorder(x) -> tuple[dict[str, float], list[str]]:
    """First-order statistics of a voxel sample.

    Skewness is m3 / m2^1.5 and Kurtosis m4 / m2^2 (not excess), both from
    population central moments; Entropy and Uniformity use the 32-bin
    histogram. A constant sample returns 0 for both shape moments and is
    reported in the returned flag list.
    """
    v = np.asarray(getattr(x, "values", x), dtype=np.float64)
    n = v.size
    mean = v.mean()
    dev = v - mean
    m2 = np.mean(dev ** 2)
    flags = []
    if v.max() == v.min():
        skew = kurt = 0.0
        flags += ["Skewness", "Kurtosis"]
    else:
        skew = np.mean(dev ** 3) / m2 ** 1.5
        kurt = np.mean(dev ** 4) / m2 ** 2
    levels, _ = _bin_levels(v, N_BINS)
    p = np.bincount(levels)[1:] / n
    p = p[p > 0]
    q25, median, q75 = np.percentile(v, [25, 50, 75])
    out = {
        "Energy": float(np.sum(v ** 2)),
        "Entropy": float(-np.sum(p * np.log2(p))) + 0.0,
        "InterquartileRange": float(q75 - q25),
        "Kurtosis": float(kurt),
        "Maximum": float(v.max()),
        "Mean": float(mean),
        "MeanAbsoluteDeviation": float(np.mean(np.abs(dev))),
        "Median": float(median),
        "Minimum": float(v.min()),
        "Range": float(v.max() - v.min()),
        "RootMeanSquared": float(math.sqrt(np.mean(v ** 2))),
        "Skewness": float(skew),
        "Uniformity": float(np.sum(p ** 2)),
        "Variance": float(m2),
    }
    return out, flags


# --- GLSZM ---------------------------------------------------------------

@dataclass(frozen=True)
class SizeZoneMatrix:
    """Sparse gray-level size-zone matrix: one (level, size) pair per zone."""

    zone_levels: np.ndarray
    zone_sizes: np.ndarray
    ng: int
    n_voxels: int

    @property
    def n_zones(self) -> int:
        return int(self.zone_levels.size)

    def dense(self) -> np.ndarray:
        """``P[i-1, j-1]`` = number of zones with level i and size j."""
        P = np.zeros((self.ng, int(self.zone_sizes.max())), dtype=np.int64)
        np.add.at(P, (self.zone_levels - 1, self.zone_sizes - 1), 1)
        return P


def _box(coords: np.ndarray):
    lo = coords.min(axis=0)
    shape = tuple(coords.max(axis=0) - lo + 1)
    local = coords - lo
    return lo, shape, (local[:, 0], local[:, 1], local[:, 2])


def glszm(d: DiscretizedRoi, connectivity: int = 26) -> SizeZoneMatrix:
    """Zones are maximal connected sets of equal level within the ROI voxels."""
    if connectivity == 26:
        structure = np.ones((3, 3, 3), dtype=bool)
    elif connectivity == 6:
        structure = ndimage.generate_binary_structure(3, 1)
    else:
        raise ValueError("connectivity must be 6 or 26")
    _, shape, idx = _box(d.coords)
    grid = np.zeros(shape, dtype=np.int64)
    grid[idx] = d.levels
    levels, sizes = [], []
    for level in np.unique(d.levels):
        labels, n = ndimage.label(grid == level, structure=structure)
        counts = np.bincount(labels.ravel(), minlength=n + 1)[1:]
        levels.append(np.full(n, level, dtype=np.int64))
        sizes.append(counts.astype(np.int64))
    return SizeZoneMatrix(np.concatenate(levels), np.concatenate(sizes), d.ng, int(d.levels.size))


def glszm_features(P: SizeZoneMatrix) -> dict[str, float]:
    """Standard GLSZM features; with Nz zones and p(i, j) = P(i, j) / Nz:

    SmallAreaEmphasis            sum p / j^2
    LargeAreaEmphasis            sum p * j^2
    GrayLevelNonUniformity       sum_i (sum_j P)^2 / Nz
    SizeZoneNonUniformity        sum_j (sum_i P)^2 / Nz
    ZoneEntropy                  -sum p log2 p
    SmallAreaHighGrayLevelEmphasis  sum p * i^2 / j^2
    SmallAreaLowGrayLevelEmphasis   sum p / (i^2 j^2)
    HighGrayLevelZoneEmphasis    sum p * i^2
    ZonePercentage               Nz / Np
    """
    i = P.zone_levels.astype(np.float64)
    j = P.zone_sizes.astype(np.float64)
    nz = P.n_zones
    _, cell_counts = np.unique(P.zone_levels * (P.n_voxels + 1) + P.zone_sizes, return_counts=True)
    p = cell_counts / nz
    _, per_level = np.unique(P.zone_levels, return_counts=True)
    _, per_size = np.unique(P.zone_sizes, return_counts=True)
    return {
        "GrayLevelNonUniformity": float(np.sum(per_level.astype(np.float64) ** 2) / nz),
        "HighGrayLevelZoneEmphasis": float(np.mean(i ** 2)),
        "LargeAreaEmphasis": float(np.mean(j ** 2)),
        "SizeZoneNonUniformity": float(np.sum(per_size.astype(np.float64) ** 2) / nz),
        "SmallAreaEmphasis": float(np.mean(1.0 / j ** 2)),
        "SmallAreaHighGrayLevelEmphasis": float(np.mean(i ** 2 / j ** 2)),
        "SmallAreaLowGrayLevelEmphasis": float(np.mean(1.0 / (i ** 2 * j ** 2))),
        "ZoneEntropy": float(-np.sum(p * np.log2(p))) + 0.0,
        "ZonePercentage": nz / P.n_voxels,
    }


# --- filters -------------------------------------------------------------

def _filled_box(x: RoiVoxels):
    """ROI bounding box; voxels outside the ROI take the nearest ROI value."""
    lo, shape, idx = _box(x.coords)
    inside = np.zeros(shape, dtype=bool)
    inside[idx] = True
    box = np.zeros(shape, dtype=np.float64)
    box[idx] = x.values
    if not inside.all():
        nearest = ndimage.distance_transform_edt(~inside, return_distances=False, return_indices=True)
        box = box[tuple(nearest)]
    return box, inside, lo


def _haar_axis(arr: np.ndarray, axis: int):
    if arr.shape[axis] % 2:
        pad = [(0, 0)] * arr.ndim
        pad[axis] = (0, 1)
        arr = np.pad(arr, pad, mode="symmetric")
    a = np.take(arr, np.arange(0, arr.shape[axis], 2), axis=axis)
    b = np.take(arr, np.arange(1, arr.shape[axis], 2), axis=axis)
    return (a + b) / math.sqrt(2.0), (a - b) / math.sqrt(2.0)


def _pad_even(arr: np.ndarray) -> np.ndarray:
    pad = [(0, n % 2) for n in arr.shape]
    return np.pad(arr, pad, mode="symmetric")


def haar_decompose(box: np.ndarray) -> dict[str, np.ndarray]:
    """Single-level separable orthonormal Haar transform of a 3D array.

    Odd axes are extended by mirroring the last sample. Band names list the
    filter applied along x, y, z in that order.
    """
    bands = {"": np.asarray(box, dtype=np.float64)}
    for axis in range(3):
        nxt = {}
        for name, arr in bands.items():
            low, high = _haar_axis(arr, axis)
            nxt[name + "L"] = low
            nxt[name + "H"] = high
        bands = nxt
    return {name: bands[name] for name in WAVELET_BANDS}


def wavelet_bank(x: RoiVoxels) -> dict[str, RoiVoxels]:
    """Eight Haar sub-bands re-masked to the ROI.

    A sub-band coefficient is kept when at least half of its 2x2x2 parent
    block lies in the ROI (any overlap if that leaves nothing).
    """
    box, inside, _ = _filled_box(x)
    if min(box.shape) < 2:
        raise ValueError("ROI bounding box must span at least 2 voxels per axis")
    bands = haar_decompose(box)
    occ = np.pad(inside, [(0, n % 2) for n in inside.shape], constant_values=False).astype(np.int64)
    sx, sy, sz = (n // 2 for n in occ.shape)
    counts = occ.reshape(sx, 2, sy, 2, sz, 2).sum(axis=(1, 3, 5))
    keep = counts >= 4
    if not keep.any():
        keep = counts >= 1
    zi, yi, xi = np.nonzero(keep.transpose(2, 1, 0))
    coords = np.stack([xi, yi, zi], axis=1)
    spacing = tuple(2 * s for s in x.source_spacing)
    return {
        name: RoiVoxels(arr[xi, yi, zi], coords, spacing)
        for name, arr in bands.items()
    }


def _unit_directions() -> np.ndarray:
    dirs = [d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)]
    dirs = np.asarray(dirs, dtype=np.float64)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _sample_trilinear(padded: np.ndarray, pts: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Values at ``pts + offset`` (voxel units) by successive linear blends."""
    base = np.floor(offset).astype(np.int64)
    f = offset - base
    p = pts + base
    x0, y0, z0 = p[:, 0], p[:, 1], p[:, 2]

    def at(dx, dy, dz):
        return padded[x0 + dx, y0 + dy, z0 + dz]

    def lerp(a, b, t):
        return a + t * (b - a)

    c00 = lerp(at(0, 0, 0), at(1, 0, 0), f[0])
    c10 = lerp(at(0, 1, 0), at(1, 1, 0), f[0])
    c01 = lerp(at(0, 0, 1), at(1, 0, 1), f[0])
    c11 = lerp(at(0, 1, 1), at(1, 1, 1), f[0])
    c0 = lerp(c00, c10, f[1])
    c1 = lerp(c01, c11, f[1])
    return lerp(c0, c1, f[2])


def lbp3d(x: RoiVoxels, radius_vox: int = 1) -> tuple[dict[str, RoiVoxels], list[str]]:
    """LBP-derived maps over the ROI.

    Around every ROI voxel the 26 normalized neighborhood directions are
    sampled trilinearly at ``radius_vox`` and ``2 * radius_vox``. ``m1`` and
    ``m2`` count samples >= the center value at the two radii; ``k`` is the
    non-excess kurtosis of the inner-radius samples (0 when they are all equal,
    which is reported in the flag list). Samples beyond the ROI box clamp to
    the edge.
    """
    box, inside, _ = _filled_box(x)
    margin = 2 * radius_vox + 1
    padded = np.pad(box, margin, mode="edge")
    _, _, idx = _box(x.coords)
    pts = np.stack(idx, axis=1) + margin
    center = padded[pts[:, 0], pts[:, 1], pts[:, 2]]

    dirs = _unit_directions()
    inner = np.empty((dirs.shape[0], pts.shape[0]))
    m2 = np.zeros(pts.shape[0], dtype=np.int64)
    for k, d in enumerate(dirs):
        inner[k] = _sample_trilinear(padded, pts, d * radius_vox)
        outer = _sample_trilinear(padded, pts, d * 2 * radius_vox)
        m2 += outer >= center
    m1 = np.sum(inner >= center, axis=0)

    mu = inner.mean(axis=0)
    dev = inner - mu
    var = np.mean(dev ** 2, axis=0)
    flat = inner.max(axis=0) == inner.min(axis=0)
    kurt = np.zeros(pts.shape[0])
    ok = ~flat
    kurt[ok] = np.mean(dev[:, ok] ** 4, axis=0) / var[ok] ** 2
    flags = ["k"] if flat.any() else []
    maps = {
        "m1": x.with_values(m1.astype(np.float64)),
        "m2": x.with_values(m2.astype(np.float64)),
        "k": x.with_values(kurt),
    }
    return maps, flags


# --- full extraction -----------------------------------------------------

def _channel_features(prefix: str, ch: RoiVoxels, values: dict, flags: list) -> None:
    fo, fo_flags = firstorder(ch)
    for name in FIRSTORDER_NAMES:
        values[f"{prefix}_firstorder_{name}"] = fo[name]
    flags += [f"{prefix}_firstorder_{n}:degenerate" for n in fo_flags]
    gl = glszm_features(glszm(discretize(ch, N_BINS)))
    for name in GLSZM_NAMES:
        values[f"{prefix}_glszm_{name}"] = gl[name]


def extract_all(x: RoiVoxels, norm: Normalization) -> FeatureVector:
    """Normalize the ROI sample and compute the full feature schema."""
    xn = normalize(x, norm)
    values: dict[str, float] = {}
    flags: list[str] = list(xn.flags)
    _channel_features("original", xn, values, flags)
    for band, ch in wavelet_bank(xn).items():
        _channel_features(f"wavelet-{band}", ch, values, flags)
    maps, lbp_flags = lbp3d(xn)
    flags += [f"lbp-3D-{m}:degenerate" for m in lbp_flags]
    for m in LBP_MAPS:
        _channel_features(f"lbp-3D-{m}", maps[m], values, flags)
    for k, v in values.items():
        if not math.isfinite(v):
            values[k] = 0.0
            flags.append(f"{k}:nonfinite")
    return FeatureVector(values, tuple(flags))
