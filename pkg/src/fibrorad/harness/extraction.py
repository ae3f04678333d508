"""Volume-to-table step: clip, resample around each ROI, extract features."""

from __future__ import annotations

import logging

import numpy as np

from ..normalize import NORMALIZATIONS, Normalization
from ..radiomics import FeatureVector, extract_all, feature_schema
from ..roi import SphereRoi, extract_roi
from ..tabular import Cohort
from ..volume import ContrastPhase, Volume, clip_hu, resample_region

log = logging.getLogger(__name__)


def roi_features(v: Volume, roi: SphereRoi, phase: ContrastPhase, norms=NORMALIZATIONS,
                 target_spacing: float = 0.5) -> dict[str, FeatureVector]:
    """Features for one ROI under each normalization.

    Only a box around the sphere is resampled; the result equals cropping a
    full-volume resample.
    """
    clipped = clip_hu(v, phase)
    pad = roi.radius + 2 * max(target_spacing, *v.spacing)
    c = np.asarray(roi.center)
    region = resample_region(clipped, target_spacing, tuple(c - pad), tuple(c + pad))
    x = extract_roi(region, roi)
    return {n.name: extract_all(x, n) for n in norms}


def patient_rows(pid, fstage, label, volumes, rois, phases=(ContrastPhase.NC, ContrastPhase.CE),
                 norms=NORMALIZATIONS, target_spacing: float = 0.5):
    """Feature rows of one patient keyed by ``(phase, roi_kind, norm)``,
    plus any extraction flags."""
    names = feature_schema()
    rows, flags = {}, []
    for phase in phases:
        for roi in rois:
            for norm_name, fv in roi_features(volumes[phase], roi, phase, norms, target_spacing).items():
                key = (phase.name, roi.kind.value, norm_name)
                rows[key] = (pid, int(fstage), int(label), [fv.values[n] for n in names])
                if fv.flags:
                    flags.append((pid, *key, fv.flags))
    return rows, flags


def assemble_tables(per_patient) -> dict[tuple, Cohort]:
    """Stack per-patient row dicts (in the given order) into cohorts."""
    names = feature_schema()
    stacked: dict[tuple, list] = {}
    for rows in per_patient:
        for key, row in rows.items():
            stacked.setdefault(key, []).append(row)
    tables = {}
    for key, rs in stacked.items():
        kind = key[1]
        tables[key] = Cohort(
            np.array([r[3] for r in rs]), names, [r[2] for r in rs], [r[1] for r in rs],
            [r[0] for r in rs], [kind] * len(rs), [f"{r[0]}:{kind}" for r in rs])
    return tables


def extract_tables(patients, phases=(ContrastPhase.NC, ContrastPhase.CE), norms=NORMALIZATIONS,
                   target_spacing: float = 0.5):
    """``patients`` yields ``(pid, fstage, label, {phase: Volume}, [SphereRoi])``.

    Returns ``{(phase_name, roi_kind, norm_name): Cohort}`` and the list of
    extraction flags. Row order follows the input order.
    """
    per_patient, flags = [], []
    for pid, fstage, label, volumes, rois in patients:
        rows, f = patient_rows(pid, fstage, label, volumes, rois, phases, norms, target_spacing)
        per_patient.append(rows)
        flags += f
    for f in flags:
        log.debug("feature flags %s", f)
    return assemble_tables(per_patient), flags


def parse_norms(names) -> tuple[Normalization, ...]:
    return tuple(Normalization.parse(n) for n in names)
