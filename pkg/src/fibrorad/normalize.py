"""Per-ROI intensity normalizations applied before feature extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .roi import RoiVoxels

__all__ = ["Normalization", "NORMALIZATIONS", "normalize", "normalize_values"]

HISTEQ_BINS = 256
DEGENERATE = "degenerate-normalization"


@dataclass(frozen=True)
class Normalization:
    method: str
    gamma: float | None = None

    def __post_init__(self):
        if self.method not in ("none", "histeq", "minmax", "zscore", "gamma"):
            raise ValueError(f"unknown normalization {self.method!r}")
        if self.method == "gamma":
            if self.gamma is None or not self.gamma > 0:
                raise ValueError("gamma correction needs a positive exponent")
        elif self.gamma is not None:
            raise ValueError(f"{self.method} takes no exponent")

    @property
    def name(self) -> str:
        if self.method == "gamma":
            return f"gamma{self.gamma:g}"
        return self.method

    @classmethod
    def parse(cls, name: str) -> "Normalization":
        name = name.strip().lower()
        if name.startswith("gamma"):
            try:
                return cls("gamma", float(name[5:]))
            except ValueError:
                raise ValueError(f"unknown normalization {name!r}") from None
        return cls(name)

    def __str__(self):
        return self.name


NORMALIZATIONS = (
    Normalization("none"),
    Normalization("histeq"),
    Normalization("minmax"),
    Normalization("zscore"),
    Normalization("gamma", 0.5),
    Normalization("gamma", 1.5),
)


def _minmax(x: np.ndarray):
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x), True
    return (x - lo) / (hi - lo), False


def normalize_values(x: np.ndarray, kind: Normalization) -> tuple[np.ndarray, bool]:
    """Normalized copy of ``x`` and whether the input was degenerate (constant)."""
    x = np.asarray(x, dtype=np.float64)
    if kind.method == "none":
        return x.copy(), False
    if kind.method == "minmax":
        return _minmax(x)
    if kind.method == "gamma":
        t, degenerate = _minmax(x)
        # clip guards against -0.0 / 1+eps from rounding before the power
        return np.clip(t, 0.0, 1.0) ** kind.gamma, degenerate
    if kind.method == "zscore":
        # test constancy directly: std of a constant can round above zero
        sd = x.std()
        if x.min() == x.max() or sd == 0:
            return np.zeros_like(x), True
        return (x - x.mean()) / sd, False
    # histogram equalization through the empirical CDF of the sample
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x), True
    bins = np.floor((x - lo) / (hi - lo) * HISTEQ_BINS).astype(np.int64)
    bins = np.clip(bins, 0, HISTEQ_BINS - 1)
    cdf = np.cumsum(np.bincount(bins, minlength=HISTEQ_BINS)) / x.size
    return cdf[bins], False


def normalize(x: RoiVoxels, kind: Normalization) -> RoiVoxels:
    values, degenerate = normalize_values(x.values, kind)
    return x.with_values(values, (DEGENERATE,) if degenerate else ())
