"""Synthetic longitudinal OCT-like cohort with planted progression lesions.

Every volume shows a smooth curved reference surface (the brightest row of
each column), a textured retina band above it and a decaying choroid below.
Converters additionally carry a bright bump on a few contiguous slices whose
amplitude ramps up over the months before conversion.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from src.synthcohort.types import PatientTimeline, VolumeScan
from src.validation.input_validator import central_block
from src.validation.schema import CohortParams

logger = logging.getLogger(__name__)

VITREOUS_LEVEL = 0.05
RETINA_LEVEL = 0.3
RETINA_TEXTURE = 0.08
CHOROID_LEVEL = 0.25
CHOROID_DECAY_ROWS = 4.0
SURFACE_LEVEL = 1.0
CONVERTER_STREAM = 2**31 - 1


def patient_id_for(index: int) -> str:
    return f"P{index:04d}"


def lesion_amplitude_at(day: int, conversion_day: Optional[int], params: CohortParams) -> float:
    """Lesion amplitude at ``day``: zero before onset, ramping to the maximum."""
    if conversion_day is None:
        return 0.0
    gap = conversion_day - day
    if gap >= params.onset_lead_days:
        return 0.0
    elapsed_months = (params.onset_lead_days - gap) / 30.0
    return params.lesion_amplitude * min(1.0, params.lesion_growth_rate * elapsed_months)


def _converter_indices(params: CohortParams) -> set:
    n_converters = int(math.floor(params.converter_fraction * params.n_patients + 0.5))
    rng = np.random.default_rng([params.seed, CONVERTER_STREAM])
    return set(int(i) for i in rng.permutation(params.n_patients)[:n_converters])


def _surface_map(rng: np.random.Generator, params: CohortParams) -> np.ndarray:
    n_slices, height, width = params.n_slices, params.height, params.width
    base = height * (0.6 + rng.uniform(-0.05, 0.05))
    curvature = height * rng.uniform(0.1, 0.2)
    tilt = height * rng.uniform(-0.05, 0.05)
    cols = (np.arange(width) - (width - 1) / 2) / (width / 2)
    rows = (np.arange(n_slices) - (n_slices - 1) / 2) / max(n_slices / 2, 1)
    surface = (
        base
        + curvature * (cols[None, :] ** 2 - 0.5)
        + 0.5 * curvature * rows[:, None] ** 2
        + tilt * rows[:, None]
    )
    return np.clip(np.rint(surface), 3, height - 3).astype(np.int64)


def _anatomy(surface: np.ndarray, params: CohortParams) -> np.ndarray:
    """Noise-free layered intensities for a given surface map."""
    thickness = max(3, params.height // 4)
    rows = np.arange(params.height)[None, :, None]
    rel = rows - surface[:, None, :]
    volume = np.full(rel.shape, VITREOUS_LEVEL, dtype=np.float64)
    retina = (rel < 0) & (rel >= -thickness)
    volume[retina] = RETINA_LEVEL + RETINA_TEXTURE * np.cos(2 * np.pi * rel[retina] / 4.0)
    below = rel > 0
    volume[below] = CHOROID_LEVEL * np.exp(-rel[below] / CHOROID_DECAY_ROWS)
    volume[rel == 0] = SURFACE_LEVEL
    return volume


def _lesion_mask(surface: np.ndarray, slices: Tuple[int, ...], center: int, params: CohortParams) -> np.ndarray:
    """Unit-amplitude drusen-like bump sitting just above the surface."""
    half_width = max(2.0, params.width / 8)
    bump_rows = max(2, params.height // 8)
    profile = np.exp(-(((np.arange(params.width) - center) / half_width) ** 2))
    rows = np.arange(params.height)[None, :, None]
    rel = rows - surface[:, None, :]
    mask = np.zeros(rel.shape, dtype=np.float64)
    inside = (rel < 0) & (rel >= -bump_rows)
    lesion_rows = np.zeros(params.n_slices, dtype=bool)
    lesion_rows[list(slices)] = True
    mask[lesion_rows] = inside[lesion_rows] * profile[None, None, :]
    return mask


def _generate_patient(index: int, converter: bool, params: CohortParams) -> PatientTimeline:
    rng = np.random.default_rng([params.seed, index])
    conversion_day = (
        int(rng.integers(params.conversion_min_day, params.conversion_max_day + 1)) if converter else None
    )
    surface = _surface_map(rng, params)
    anatomy = _anatomy(surface, params)

    roi_start, roi_stop = central_block(params.n_slices, params.roi_slices)
    first = int(rng.integers(roi_start, roi_stop - params.affected_slices + 1))
    lesion_slices = tuple(range(first, first + params.affected_slices))
    center = int(rng.integers(params.width // 4, 3 * params.width // 4 + 1))
    lesion = _lesion_mask(surface, lesion_slices, center, params) if converter else None

    visits = []
    for v in range(params.n_visits):
        day = v * params.visit_interval_days
        amplitude = lesion_amplitude_at(day, conversion_day, params)
        volume = anatomy.copy()
        if lesion is not None and amplitude > 0:
            volume += amplitude * lesion
        volume += rng.normal(0.0, params.noise_level, size=volume.shape)
        np.clip(volume, 0.0, 1.0, out=volume)
        visits.append(
            VolumeScan(
                slices=volume.astype(np.float32),
                surface=surface,
                visit_day=day,
                lesion_slices=lesion_slices if amplitude > 0 else (),
                lesion_amplitude=float(amplitude),
            )
        )
    return PatientTimeline(patient_id=patient_id_for(index), visits=tuple(visits), conversion_day=conversion_day)


def generate_cohort(params: CohortParams, n_workers: int = 1, progress: bool = False) -> List[PatientTimeline]:
    """Generate the cohort described by ``params``.

    Each patient draws from its own stream seeded by ``(seed, index)``, so the
    result is identical for any ``n_workers``.
    """
    converters = _converter_indices(params)
    indices = range(params.n_patients)
    logger.info(
        "Generating %d patients (%d converters), %d visits each",
        params.n_patients, len(converters), params.n_visits,
    )
    work = lambda i: _generate_patient(i, i in converters, params)  # noqa: E731
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            iterator = pool.map(work, indices)
            return list(tqdm(iterator, total=params.n_patients, desc="Patients", disable=not progress))
    return [work(i) for i in tqdm(indices, desc="Patients", disable=not progress)]
