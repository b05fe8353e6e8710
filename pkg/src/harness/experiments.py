"""Label-efficiency comparison of pretrained and random encoder initialisation."""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import Field

from src.harness.crossval import run_crossval
from src.harness.data import build_examples
from src.harness.report import format_mean_std, format_table, write_text_artifact
from src.models.spec import ModelSpec
from src.synthcohort.types import DatasetSplit, PatientTimeline
from src.validation.schema import PreprocessConfig, StrictModel, TrainConfig

logger = logging.getLogger(__name__)

TOLERANCE = 0.02


class SeedResult(StrictModel):
    seed: int
    init: str
    auroc_mean: float
    ensemble_auroc: float


class PretrainingComparison(StrictModel):
    architecture: str
    label_fraction: float
    seeds: List[int]
    runs: List[SeedResult]
    random_mean: float
    tinc_mean: float
    tolerance: float = TOLERANCE
    passed: bool
    linear_probe_auroc: Optional[float] = Field(None, ge=0.0, le=1.0)


def compare_pretraining(
    cfg: TrainConfig,
    spec: ModelSpec,
    timelines: Sequence[PatientTimeline],
    split: DatasetSplit,
    preprocess: PreprocessConfig,
    checkpoint: str,
    seeds: Sequence[int] = (0, 1, 2),
    label_fraction: float = 0.1,
    progress: bool = False,
) -> PretrainingComparison:
    """Cross-validate random and pretrained initialisation on a label-subsampled training pool.

    Passes when the pretrained mean holdout AUROC over seeds is at least the
    random mean minus ``TOLERANCE``.
    """
    examples = build_examples(timelines, cfg.window_days, preprocess, progress=progress)
    runs: List[SeedResult] = []
    for seed in seeds:
        for init in ("random", "tinc_checkpoint"):
            run_cfg = cfg.model_copy(
                update={
                    "seed": seed,
                    "init": init,
                    "checkpoint": checkpoint if init == "tinc_checkpoint" else None,
                    "label_fraction": label_fraction,
                }
            )
            result = run_crossval(run_cfg, spec, timelines, split, preprocess, examples=examples, progress=progress)
            runs.append(
                SeedResult(
                    seed=seed,
                    init=init,
                    auroc_mean=result.report.auroc_mean,
                    ensemble_auroc=result.report.ensemble_auroc,
                )
            )
            logger.info("seed %d %s: holdout AUROC %.3f", seed, init, result.report.auroc_mean)
    by_init: Dict[str, List[float]] = {"random": [], "tinc_checkpoint": []}
    for r in runs:
        by_init[r.init].append(r.auroc_mean)
    random_mean = float(np.mean(by_init["random"]))
    tinc_mean = float(np.mean(by_init["tinc_checkpoint"]))
    return PretrainingComparison(
        architecture=spec.architecture,
        label_fraction=label_fraction,
        seeds=list(seeds),
        runs=runs,
        random_mean=random_mean,
        tinc_mean=tinc_mean,
        passed=tinc_mean >= random_mean - TOLERANCE,
    )


def render_comparison(c: PretrainingComparison) -> str:
    rows = []
    for init, label in (("random", "random"), ("tinc_checkpoint", "TINC")):
        values = [r.auroc_mean for r in c.runs if r.init == init]
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        rows.append((label, format_mean_std(float(np.mean(values)), std), " ".join(f"{v:.3f}" for v in values)))
    text = f"{c.architecture}, {c.label_fraction:.0%} of training labels, seeds {c.seeds}\n\n"
    text += format_table(("Init", "AUROC (mean±std over seeds)", "Per seed"), rows)
    verdict = "PASS" if c.passed else "FAIL"
    text += f"\n{verdict}: TINC {c.tinc_mean:.3f} vs random {c.random_mean:.3f} (tolerance {c.tolerance})\n"
    if c.linear_probe_auroc is not None:
        text += f"linear probe AUROC {c.linear_probe_auroc:.3f}\n"
    return text


def write_comparison(c: PretrainingComparison, out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    paths = [out_dir / "comparison.json", out_dir / "comparison.txt"]
    write_text_artifact(paths[0], json.dumps(c.model_dump(mode="json"), sort_keys=True, indent=2) + "\n")
    write_text_artifact(paths[1], render_comparison(c))
    return paths
