"""On-disk cohort format.

Layout::

    <root>/cohort.json                 manifest: format_version, seed, params, patients
    <root>/<patient_id>/visit_NNN.raw  little-endian float32 (S*H*W), C order
    <root>/<patient_id>/visit_NNN.json dims, visit_day, conversion_day, surface, lesions
"""
import json
import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np

from src.errors import ArtifactIOError
from src.synthcohort.types import PatientTimeline, VolumeScan
from src.validation.schema import CohortParams

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "cohort.json"
RAW_DTYPE = "<f4"


def dump_json(obj, path: Path) -> None:
    """Byte-stable JSON (sorted keys, fixed indent, trailing newline)."""
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def save_cohort(timelines: List[PatientTimeline], params: CohortParams, root: Path) -> Path:
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        patients = []
        for timeline in timelines:
            patient_dir = root / timeline.patient_id
            patient_dir.mkdir(exist_ok=True)
            for i, scan in enumerate(timeline.visits):
                stem = f"visit_{i:03d}"
                (patient_dir / f"{stem}.raw").write_bytes(scan.slices.astype(RAW_DTYPE).tobytes(order="C"))
                dump_json(
                    {
                        "dims": list(scan.shape),
                        "dtype": RAW_DTYPE,
                        "visit_day": scan.visit_day,
                        "conversion_day": timeline.conversion_day,
                        "surface": scan.surface.tolist(),
                        "lesion_slices": list(scan.lesion_slices),
                        "lesion_amplitude": scan.lesion_amplitude,
                    },
                    patient_dir / f"{stem}.json",
                )
            patients.append(
                {
                    "patient_id": timeline.patient_id,
                    "conversion_day": timeline.conversion_day,
                    "visit_days": list(timeline.visit_days),
                }
            )
        dump_json(
            {
                "format_version": FORMAT_VERSION,
                "seed": params.seed,
                "params": params.model_dump(mode="json"),
                "patients": patients,
            },
            root / MANIFEST_NAME,
        )
    except OSError as e:
        raise ArtifactIOError(f"Could not write cohort to {root}: {e}") from e
    logger.info("Wrote %d patients to %s", len(timelines), root)
    return root / MANIFEST_NAME


def load_cohort(root: Path) -> Tuple[CohortParams, List[PatientTimeline]]:
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactIOError(f"Could not read cohort manifest {manifest_path}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArtifactIOError(f"Unsupported cohort format version {manifest.get('format_version')!r}")

    params = CohortParams(**manifest["params"])
    timelines = []
    try:
        for entry in manifest["patients"]:
            patient_dir = root / entry["patient_id"]
            visits = []
            for i in range(len(entry["visit_days"])):
                meta = json.loads((patient_dir / f"visit_{i:03d}.json").read_text(encoding="utf-8"))
                raw = np.frombuffer((patient_dir / f"visit_{i:03d}.raw").read_bytes(), dtype=meta["dtype"])
                visits.append(
                    VolumeScan(
                        slices=raw.reshape(meta["dims"]).astype(np.float32),
                        surface=np.asarray(meta["surface"], dtype=np.int64),
                        visit_day=meta["visit_day"],
                        lesion_slices=tuple(meta["lesion_slices"]),
                        lesion_amplitude=meta["lesion_amplitude"],
                    )
                )
            timelines.append(
                PatientTimeline(entry["patient_id"], tuple(visits), entry["conversion_day"])
            )
    except (OSError, KeyError, ValueError) as e:
        raise ArtifactIOError(f"Corrupt cohort directory {root}: {e}") from e
    return params, timelines
