import math
from typing import List, Sequence, Tuple

import numpy as np

from src.errors import ConfigError, TrainingDataError
from src.synthcohort.types import DatasetSplit, PatientTimeline, VolumeScan


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(
    patients: Sequence[PatientTimeline],
    holdout_frac: float = 0.2,
    k: int = 4,
    seed: int = 0,
) -> DatasetSplit:
    """Stratified patient-level holdout plus k stratified folds.

    Converters and non-converters are shuffled separately; the holdout takes
    its share of each stratum and the remaining patients are dealt round-robin
    (converters first) so fold sizes and converter counts differ by at most one.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    if not 0.0 <= holdout_frac < 1.0:
        raise ConfigError("holdout_frac must lie in [0, 1)")
    ids = [p.patient_id for p in patients]
    if len(set(ids)) != len(ids):
        raise TrainingDataError("patient ids must be unique")

    rng = np.random.default_rng(seed)
    converters = sorted(p.patient_id for p in patients if p.is_converter)
    others = sorted(p.patient_id for p in patients if not p.is_converter)
    converters = [converters[i] for i in rng.permutation(len(converters))]
    others = [others[i] for i in rng.permutation(len(others))]

    n_holdout = _round_half_up(holdout_frac * len(ids))
    n_hold_conv = min(_round_half_up(holdout_frac * len(converters)), n_holdout)
    n_hold_other = n_holdout - n_hold_conv
    if n_hold_other > len(others):
        n_hold_conv, n_hold_other = n_holdout - len(others), len(others)

    holdout = converters[:n_hold_conv] + others[:n_hold_other]
    pool_conv = converters[n_hold_conv:]
    pool_other = others[n_hold_other:]
    for name, stratum in (("converter", pool_conv), ("non-converter", pool_other)):
        if 0 < len(stratum) < k:
            raise TrainingDataError(f"Need at least {k} {name} patients outside the holdout, got {len(stratum)}")
    if not pool_conv and not pool_other:
        raise TrainingDataError("No patients left for cross-validation folds")

    folds: List[List[str]] = [[] for _ in range(k)]
    for i, pid in enumerate(pool_conv + pool_other):
        folds[i % k].append(pid)
    return DatasetSplit(holdout=tuple(sorted(holdout)), folds=tuple(tuple(sorted(f)) for f in folds))


def sample_visit_pair(timeline: PatientTimeline, rng: np.random.Generator) -> Tuple[VolumeScan, VolumeScan, int]:
    """Two distinct visits drawn uniformly without replacement, plus their day gap."""
    if len(timeline.visits) < 2:
        raise TrainingDataError(f"{timeline.patient_id} has fewer than two visits")
    i, j = rng.choice(len(timeline.visits), size=2, replace=False)
    a, b = timeline.visits[int(i)], timeline.visits[int(j)]
    return a, b, abs(b.visit_day - a.visit_day)
