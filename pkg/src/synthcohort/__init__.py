from src.synthcohort.generator import generate_cohort
from src.synthcohort.labeling import label_scans, scan_label
from src.synthcohort.preprocessing import (
    augment_scan,
    detect_surface,
    flatten_volume,
    prepare_volume,
    preprocess_scan,
)
from src.synthcohort.splits import sample_visit_pair, split_dataset
from src.synthcohort.storage import load_cohort, save_cohort
from src.synthcohort.types import DatasetSplit, LabelledExample, PatientTimeline, VolumeScan

__all__ = [
    "DatasetSplit",
    "LabelledExample",
    "PatientTimeline",
    "VolumeScan",
    "augment_scan",
    "detect_surface",
    "flatten_volume",
    "generate_cohort",
    "label_scans",
    "load_cohort",
    "prepare_volume",
    "preprocess_scan",
    "sample_visit_pair",
    "save_cohort",
    "scan_label",
    "split_dataset",
]
