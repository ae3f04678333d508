"""Synthetic liver phantoms with a planted texture difference between classes.

Both classes share a smoothed Gaussian texture around ``base_hu``. Class 1
adds sparse bright speckles with gamma-distributed amplitude, which pushes up
the tail statistics (maximum, kurtosis, skewness, energy) and the small bright
zone counts. The liver is an axis-aligned ellipsoid; each patient gets a
needle entering through its surface.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .roi import (
    LiverMask,
    SphereRoi,
    place_biopsy_roi,
    place_nonbiopsy_roi,
    shift_to_fit,
    write_manifest,
)
from .volume import ContrastPhase, Volume, write_volume

MIN_SEMI_AXIS_MM = 80.0
BACKGROUND_HU = -100.0
CE_OFFSET_HU = 60.0
MAX_NEEDLE_TILT_DEG = 60.0


@dataclass(frozen=True)
class PhantomSpec:
    class_label: int = 0
    base_hu: float = 55.0
    noise_sd: float = 6.0
    smoothing_mm: tuple[float, float] = (2.0, 2.0)  # per class
    speckle_density: float = 0.003  # per voxel, class 1 only
    speckle_shape: float = 2.0
    speckle_scale: float = 8.0  # HU
    semi_axes_mm: tuple[float, float, float] = (90.0, 85.0, 80.0)
    margin_mm: float = 6.0
    spacing: tuple[float, float, float] = (1.5, 1.5, 1.5)
    seed: int = 0

    def validate(self) -> None:
        if self.class_label not in (0, 1):
            raise ValueError("class_label must be 0 or 1")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if min(self.semi_axes_mm) < MIN_SEMI_AXIS_MM:
            raise ValueError(f"liver semi-axes must be >= {MIN_SEMI_AXIS_MM} mm, got {self.semi_axes_mm}")
        if self.margin_mm < 0 or self.noise_sd < 0 or any(s < 0 for s in self.smoothing_mm):
            raise ValueError("margin, noise and smoothing must be non-negative")
        if not 0 <= self.speckle_density < 1:
            raise ValueError("speckle density must lie in [0, 1)")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(np.ceil(2 * (a + self.margin_mm) / s)) + 1
                     for a, s in zip(self.semi_axes_mm, self.spacing))

    @property
    def center_mm(self) -> np.ndarray:
        return np.array([(d - 1) * s / 2 for d, s in zip(self.dims, self.spacing)])


def ellipsoid_mask(spec: PhantomSpec) -> LiverMask:
    c = spec.center_mm
    axes = [(np.arange(n) * s - c[a]) / spec.semi_axes_mm[a] for a, (n, s) in enumerate(zip(spec.dims, spec.spacing))]
    r2 = axes[0][:, None, None] ** 2 + axes[1][None, :, None] ** 2 + axes[2][None, None, :] ** 2
    return LiverMask(r2 <= 1.0, spec.spacing)


def _texture(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    field_ = rng.standard_normal(spec.dims)
    length = spec.smoothing_mm[spec.class_label]
    if length > 0:
        field_ = ndimage.gaussian_filter(field_, [length / s for s in spec.spacing], mode="wrap")
        field_ /= field_.std()
    out = spec.base_hu + spec.noise_sd * field_
    if spec.class_label == 1 and spec.speckle_density > 0:
        spots = rng.random(spec.dims) < spec.speckle_density
        out[spots] += rng.gamma(spec.speckle_shape, spec.speckle_scale, size=int(spots.sum()))
    return out


def _needle(spec: PhantomSpec):
    """Tip on the ellipsoid surface; direction tilted away from the inward normal.

    Steep tilts leave the biopsy sphere poking out of the liver, which the
    fitting shift then repairs.
    """
    rng = np.random.default_rng([spec.seed, 1])
    u = rng.standard_normal(3)
    u /= np.linalg.norm(u)
    a = np.asarray(spec.semi_axes_mm)
    tip = spec.center_mm + a * u
    inward = -(u / a)
    inward /= np.linalg.norm(inward)
    tilt = np.deg2rad(MAX_NEEDLE_TILT_DEG) * rng.random()
    perp = rng.standard_normal(3)
    perp -= perp.dot(inward) * inward
    perp /= np.linalg.norm(perp)
    d = np.cos(tilt) * inward + np.sin(tilt) * perp
    return tip, d / np.linalg.norm(d)


def generate_phantom(spec: PhantomSpec):
    """Returns ``(Volume, LiverMask, needle_tip, needle_dir)`` for the NC phase.

    Values are rounded to whole HU, like stored CT.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    mask = ellipsoid_mask(spec)
    vox = _texture(spec, rng)
    vox[~mask.grid] = BACKGROUND_HU
    tip, d = _needle(spec)
    return Volume(np.round(vox), spec.spacing), mask, tip, d


def contrast_phase(v: Volume, mask: LiverMask) -> Volume:
    vox = np.array(v.voxels)
    vox[mask.grid] += CE_OFFSET_HU
    return v.with_voxels(vox)


@dataclass(frozen=True)
class PhantomPatient:
    patient_id: str
    label: int
    fstage: int
    spec: PhantomSpec
    biopsy: SphereRoi
    nonbiopsy: SphereRoi
    needle_tip: tuple[float, float, float]
    needle_dir: tuple[float, float, float]
    shifted: bool


@dataclass
class PhantomCohort:
    """Patients with their ROI geometry; volumes are regenerated on demand."""

    patients: list[PhantomPatient] = field(default_factory=list)

    def volumes(self, p: PhantomPatient) -> tuple[dict, LiverMask]:
        nc, mask, _, _ = generate_phantom(p.spec)
        return {ContrastPhase.NC: nc, ContrastPhase.CE: contrast_phase(nc, mask)}, mask

    def manifest(self) -> list[tuple[str, SphereRoi]]:
        rows = []
        for p in self.patients:
            rows += [(p.patient_id, p.biopsy), (p.patient_id, p.nonbiopsy)]
        return rows

    def labels(self) -> dict[str, tuple[int, int]]:
        return {p.patient_id: (p.fstage, p.label) for p in self.patients}


def _patient_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), index]).generate_state(1)[0])


def generate_cohort(n_per_class=(26, 40), master_seed: int = 0, base: PhantomSpec | None = None,
                    axis_jitter_mm: float = 10.0) -> PhantomCohort:
    """``n_per_class = (n_label0, n_label1)``. Class order is shuffled over
    patient ids; each patient draws its own liver size and needle."""
    n0, n1 = (int(n) for n in n_per_class)
    if n0 < 2 or n1 < 2:
        raise ValueError("need at least 2 patients per class")
    base = base or PhantomSpec()
    rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), 0x5EED]))
    labels = rng.permutation(np.r_[np.zeros(n0, int), np.ones(n1, int)])
    width = len(str(n0 + n1))
    out = PhantomCohort()
    for i, lab in enumerate(labels):
        prng = np.random.default_rng(_patient_seed(master_seed, i + 1))
        axes = tuple(float(a + axis_jitter_mm * prng.random()) for a in base.semi_axes_mm)
        spec = replace(base, class_label=int(lab), semi_axes_mm=axes, seed=_patient_seed(master_seed, 10_000 + i))
        spec.validate()
        mask = ellipsoid_mask(spec)
        tip, d = _needle(spec)
        raw = place_biopsy_roi(tip, d)
        biopsy = shift_to_fit(raw, mask)
        nonbiopsy = place_nonbiopsy_roi(prng, mask, biopsy.center)
        fstage = int(prng.integers(1, 5)) if lab == 1 else 0
        out.patients.append(PhantomPatient(
            f"P{i + 1:0{width}d}", int(lab), fstage, spec, biopsy, nonbiopsy,
            tuple(tip), tuple(d), biopsy != raw))
    return out


def write_cohort(cohort: PhantomCohort, out_dir: str | os.PathLike) -> dict[str, Path]:
    """volumes/<pid>_{NC,CE,mask}.mhd, rois.csv and labels.csv."""
    out = Path(out_dir)
    vol_dir = out / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)
    for p in cohort.patients:
        vols, mask = cohort.volumes(p)
        for phase, v in vols.items():
            write_volume(v, vol_dir / f"{p.patient_id}_{phase.name}.mhd")
        write_volume(mask.to_volume(), vol_dir / f"{p.patient_id}_mask.mhd")
    write_manifest(out / "rois.csv", cohort.manifest())
    write_labels(out / "labels.csv", cohort.labels())
    return {"volumes": vol_dir, "rois": out / "rois.csv", "labels": out / "labels.csv"}


def write_labels(path, labels: dict[str, tuple[int, int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("patient_id", "fstage", "label"))
        for pid in sorted(labels):
            w.writerow((pid, *labels[pid]))


def read_labels(path) -> dict[str, tuple[int, int]]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            fstage, label = int(row["fstage"]), int(row["label"])
            if label != (fstage >= 1):
                raise ValueError(f"label/fstage mismatch for {row['patient_id']}")
            out[row["patient_id"]] = (fstage, label)
    return out
