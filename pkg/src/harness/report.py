"""Metrics report: schema, JSON/text rendering and prediction CSVs."""
import csv
import io
import json
import logging
from pathlib import Path
from typing import Annotated, List, Optional, Sequence

from pydantic import Field, model_validator

from src.errors import ArtifactIOError
from src.harness.metrics import mean_std
from src.validation.schema import StrictModel

logger = logging.getLogger(__name__)

UnitFloat = Annotated[float, Field(ge=0.0, le=1.0)]


class FoldMetrics(StrictModel):
    fold: int = Field(ge=0)
    auroc: UnitFloat
    prauc: UnitFloat
    n_scans: int = Field(ge=0)
    n_positive: int = Field(ge=0)


class ComparisonRow(StrictModel):
    label: str
    run: str
    auroc_mean: UnitFloat
    auroc_std: float = Field(ge=0.0)
    prauc_mean: UnitFloat
    prauc_std: float = Field(ge=0.0)
    ensemble_auroc: UnitFloat


class MetricsReport(StrictModel):
    """Per-fold holdout metrics, their mean and sample std, and ensemble metrics."""

    architecture: str
    preset: str
    init: str
    encoder_mode: str
    n_params: int = Field(ge=0)
    flops: int = Field(ge=0)
    folds: List[FoldMetrics]
    auroc_mean: UnitFloat
    auroc_std: float = Field(ge=0.0)
    prauc_mean: UnitFloat
    prauc_std: float = Field(ge=0.0)
    ensemble_auroc: UnitFloat
    ensemble_prauc: UnitFloat
    config_hash: str
    seed: int
    version: str
    cohort: str = "synthetic"
    comparison: Optional[List[ComparisonRow]] = None

    @model_validator(mode="after")
    def check_summary(self):
        if not self.folds:
            raise ValueError("a report needs at least one fold")
        for name in ("auroc", "prauc"):
            mean, std = mean_std([getattr(f, name) for f in self.folds])
            if abs(mean - getattr(self, f"{name}_mean")) > 1e-12 or abs(std - getattr(self, f"{name}_std")) > 1e-12:
                raise ValueError(f"{name} mean/std do not match the per-fold values")
        return self

    @classmethod
    def from_folds(cls, folds: Sequence[FoldMetrics], **fields) -> "MetricsReport":
        if not folds:
            raise ValueError("a report needs at least one fold")
        auroc_mean, auroc_std = mean_std([f.auroc for f in folds])
        prauc_mean, prauc_std = mean_std([f.prauc for f in folds])
        return cls(
            folds=list(folds),
            auroc_mean=auroc_mean,
            auroc_std=auroc_std,
            prauc_mean=prauc_mean,
            prauc_std=prauc_std,
            **fields,
        )


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.3f}±{std:.3f}"


def humanize_count(n: int) -> str:
    if n >= 1_000_000_000:
        return f"{round(n / 1e9)}G"
    if n >= 1_000_000:
        return f"{round(n / 1e6)}M"
    if n >= 1_000:
        return f"{round(n / 1e3)}K"
    return str(n)


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Left-aligned columns separated by two spaces."""
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_text(report: MetricsReport) -> str:
    pretraining = "TINC" if report.init == "tinc_checkpoint" else "-"
    header = ("Model", "#Params", "FLOPs", "Pretraining", "Encoder", "AUROC", "PRAUC")
    rows = [
        (
            report.architecture,
            humanize_count(report.n_params),
            humanize_count(report.flops),
            pretraining,
            report.encoder_mode,
            format_mean_std(report.auroc_mean, report.auroc_std),
            format_mean_std(report.prauc_mean, report.prauc_std),
        ),
        (
            f"{report.architecture} (ensemble of {len(report.folds)})",
            "",
            "",
            pretraining,
            report.encoder_mode,
            f"{report.ensemble_auroc:.3f}",
            f"{report.ensemble_prauc:.3f}",
        ),
    ]
    text = format_table(header, rows)
    text += "\n" + format_table(
        ("Fold", "Scans", "Positive", "AUROC", "PRAUC"),
        [(str(f.fold), str(f.n_scans), str(f.n_positive), f"{f.auroc:.3f}", f"{f.prauc:.3f}") for f in report.folds],
    )
    if report.comparison:
        text += "\nComparison\n" + format_table(
            ("Init", "Run", "AUROC", "PRAUC", "Ensemble AUROC"),
            [
                (
                    c.label,
                    c.run,
                    format_mean_std(c.auroc_mean, c.auroc_std),
                    format_mean_std(c.prauc_mean, c.prauc_std),
                    f"{c.ensemble_auroc:.3f}",
                )
                for c in report.comparison
            ],
        )
    text += f"\nconfig {report.config_hash[:12]}  seed {report.seed}  version {report.version}  cohort {report.cohort}\n"
    return text


def write_text_artifact(path: Path, content: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8", newline="\n")
    except OSError as e:
        raise ArtifactIOError(f"Could not write {path}: {e}") from e


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_report(report: MetricsReport, out_dir) -> List[Path]:
    """Write report.json and report.txt into ``out_dir``."""
    out_dir = Path(out_dir)
    paths = [out_dir / "report.json", out_dir / "report.txt"]
    write_text_artifact(paths[0], report_json(report))
    write_text_artifact(paths[1], render_text(report))
    logger.info("Wrote %s", ", ".join(str(p) for p in paths))
    return paths


def read_report(path) -> MetricsReport:
    try:
        return MetricsReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ArtifactIOError(f"Could not read {path}: {e}") from e


PREDICTION_COLUMNS = ("patient_id", "visit_day", "label", "score", "fold")


def write_predictions(rows: Sequence[dict], path) -> Path:
    """Per-scan predictions; ``fold`` is an integer or "ensemble"."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=PREDICTION_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({**row, "score": repr(float(row["score"]))})
    path = Path(path)
    write_text_artifact(path, buffer.getvalue())
    return path
