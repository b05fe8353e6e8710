from typing import List, Optional

import torch

from src.synthcohort.preprocessing import prepare_volume
from src.synthcohort.types import LabelledExample, PatientTimeline
from src.validation.input_validator import central_block
from src.validation.schema import PreprocessConfig

DEFAULT_WINDOW_DAYS = 183


def scan_label(visit_day: int, conversion_day: Optional[int], window_days: int = DEFAULT_WINDOW_DAYS) -> Optional[int]:
    """1 if conversion follows within the window, 0 otherwise, None once converted."""
    if conversion_day is None:
        return 0
    gap = conversion_day - visit_day
    if gap <= 0:
        return None
    return 1 if gap <= window_days else 0


def label_scans(
    timeline: PatientTimeline,
    window_days: int = DEFAULT_WINDOW_DAYS,
    preprocess: Optional[PreprocessConfig] = None,
) -> List[LabelledExample]:
    """Label every at-risk scan of a timeline.

    Scans on or after the conversion day are dropped. With ``preprocess`` the
    volume is flattened and preprocessed and lesion indices are moved into
    the kept slice block; otherwise the raw slices are carried as-is.
    """
    examples = []
    for scan in timeline.visits:
        label = scan_label(scan.visit_day, timeline.conversion_day, window_days)
        if label is None:
            continue
        if preprocess is None:
            volume = torch.from_numpy(scan.slices.copy()).to(torch.get_default_dtype())
            lesions = scan.lesion_slices
        else:
            volume = prepare_volume(scan, preprocess)
            start, stop = central_block(scan.shape[0], preprocess.n_slices)
            lesions = tuple(s - start for s in scan.lesion_slices if start <= s < stop)
        examples.append(
            LabelledExample(
                patient_id=timeline.patient_id,
                visit_day=scan.visit_day,
                volume=volume,
                label=label,
                lesion_slices=lesions,
            )
        )
    return examples
