import os

import numpy as np
import pytest
import torch

from src.synthcohort.generator import generate_cohort
from src.synthcohort.types import PatientTimeline, VolumeScan
from src.validation.schema import CohortParams, PreprocessConfig

RUN_SLOW = os.getenv("VMIL_RUN_SLOW") == "1"


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set VMIL_RUN_SLOW=1 to run desk-scale training")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def default_float32():
    torch.set_default_dtype(torch.float32)
    yield
    torch.set_default_dtype(torch.float32)


@pytest.fixture
def tiny_params():
    """Small cohort: 12 patients, half converters, 6 quarterly visits, 12x32x32 volumes."""
    return CohortParams(
        n_patients=12,
        converter_fraction=0.5,
        n_visits=6,
        visit_interval_days=90,
        n_slices=12,
        roi_slices=8,
        height=32,
        width=32,
        conversion_min_day=200,
        conversion_max_day=400,
        seed=3,
    )


@pytest.fixture
def tiny_cohort(tiny_params):
    return generate_cohort(tiny_params)


@pytest.fixture
def tiny_preprocess():
    return PreprocessConfig(n_slices=8, out_h=32, out_w=32)


def make_scan(n_slices=4, height=8, width=6, visit_day=0, surface_row=5, lesions=()):
    slices = np.full((n_slices, height, width), 0.2, dtype=np.float32)
    slices[:, surface_row, :] = 1.0
    surface = np.full((n_slices, width), surface_row, dtype=np.int64)
    return VolumeScan(slices=slices, surface=surface, visit_day=visit_day, lesion_slices=lesions)


def make_timeline(patient_id="P0000", days=(0, 30), conversion_day=None, **scan_kwargs):
    visits = tuple(make_scan(visit_day=d, **scan_kwargs) for d in days)
    return PatientTimeline(patient_id=patient_id, visits=visits, conversion_day=conversion_day)
