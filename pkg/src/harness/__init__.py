from src.harness.attention import OverlapResult, attention_overlap, topk_overlap
from src.harness.crossval import CrossValResult, ensemble_predict, run_crossval, score_examples
from src.harness.data import VolumeDataset, build_examples, predict_scores, subsample_examples
from src.harness.experiments import PretrainingComparison, compare_pretraining, write_comparison
from src.harness.metrics import auroc, mean_std, prauc
from src.harness.probe import linear_probe_auroc
from src.harness.report import FoldMetrics, MetricsReport, read_report, write_predictions, write_report
from src.harness.training import TrainResult, train_model

__all__ = [
    "CrossValResult",
    "FoldMetrics",
    "MetricsReport",
    "OverlapResult",
    "PretrainingComparison",
    "TrainResult",
    "VolumeDataset",
    "attention_overlap",
    "auroc",
    "build_examples",
    "compare_pretraining",
    "ensemble_predict",
    "linear_probe_auroc",
    "mean_std",
    "prauc",
    "predict_scores",
    "read_report",
    "run_crossval",
    "score_examples",
    "subsample_examples",
    "topk_overlap",
    "train_model",
    "write_comparison",
    "write_predictions",
    "write_report",
]
