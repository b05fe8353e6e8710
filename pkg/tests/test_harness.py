import math

import numpy as np
import pytest
import torch

from src.errors import ArtifactIOError, AttentionUnavailableError, MetricUndefinedError, NumericalAbortError, SpecMismatchError, TrainingDataError
from src.harness.attention import attention_overlap, topk_overlap
from src.harness.crossval import check_holdout_isolation, ensemble_predict, run_crossval, score_examples
from src.harness.data import build_examples, fold_seed, gather, subsample_examples
from src.harness.metrics import auroc, mean_std, prauc, ranking_order
from src.harness.probe import lesion_slice_dataset
from src.harness.report import FoldMetrics, MetricsReport, format_mean_std, read_report, report_json, write_predictions, write_report
from src.harness.training import train_model
from src.models.factory import build_model, load_model
from src.models.spec import ModelSpec
from src.synthcohort.splits import split_dataset
from src.synthcohort.types import DatasetSplit, LabelledExample
from src.validation.schema import AugmentPolicy, OptimizerConfig, TrainConfig
from src.verify import pairwise_auroc, sweep_prauc


def quick_config(**updates):
    base = TrainConfig(
        architecture="cnn_meanpool",
        epochs=1,
        k_folds=2,
        holdout_frac=0.25,
        augment=AugmentPolicy.identity(),
        optimizer=OptimizerConfig(kind="adam", lr=1e-3, batch_size=4),
    )
    return base.model_copy(update=updates)


def quick_spec(arch="cnn_meanpool", n_slices=8):
    return ModelSpec.from_preset(arch, "desk_scale", input={"n_slices": n_slices})


def constant_model(probability, spec=None):
    """Model whose head ignores the input and outputs ``probability``."""
    model = build_model(spec or quick_spec(n_slices=4), seed=0).eval()
    with torch.no_grad():
        model.aggregator.head.weight.zero_()
        model.aggregator.head.bias.fill_(math.log(probability / (1 - probability)))
    return model


def synthetic_examples(n=8, n_slices=8, nan_index=None):
    examples = []
    for i in range(n):
        volume = torch.rand(n_slices, 32, 32, generator=torch.Generator().manual_seed(i))
        if i == nan_index:
            volume[0, 0, 0] = float("nan")
        examples.append(LabelledExample(patient_id=f"P{i}", visit_day=0, volume=volume, label=i % 2))
    return examples


def test_auroc_examples():
    assert auroc([0.1, 0.9], [0, 1]) == 1.0
    assert auroc([0.9, 0.1], [0, 1]) == 0.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auroc_matches_pairwise_count():
    """Rank-based AUROC equals the O(N^2) pair count exactly, ties included."""
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(2, 200))
        scores = rng.integers(0, 20, size=n) / 20.0
        labels = rng.integers(0, 2, size=n)
        labels[:2] = (0, 1)
        assert auroc(scores, labels) == pairwise_auroc(scores, labels)


def test_auroc_monotone_invariance():
    rng = np.random.default_rng(1)
    scores = rng.uniform(size=100)
    labels = rng.integers(0, 2, size=100)
    base = auroc(scores, labels)
    assert auroc(np.exp(scores), labels) == base
    assert auroc(3.0 * scores - 7.0, labels) == base


def test_auroc_undefined_for_one_class():
    with pytest.raises(MetricUndefinedError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        auroc([0.1, float("nan")], [0, 1])


def test_prauc_examples():
    assert prauc([0.3, 0.2, 0.1], [1, 1, 1]) == 1.0
    assert prauc([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
    with pytest.raises(MetricUndefinedError):
        prauc([0.1, 0.2], [0, 0])


def test_prauc_matches_threshold_sweep():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(2, 200))
        scores = rng.integers(0, 10, size=n) / 10.0
        labels = rng.integers(0, 2, size=n)
        labels[0] = 1
        assert abs(prauc(scores, labels) - sweep_prauc(scores, labels)) <= 1e-12


def test_ranking_order_breaks_ties_by_index():
    assert ranking_order(np.array([0.5, 0.9, 0.5, 0.1])).tolist() == [1, 0, 2, 3]


def test_mean_std():
    assert mean_std([0.7, 0.7, 0.7]) == (0.7, 0.0)
    assert mean_std([0.5]) == (0.5, 0.0)
    mean, std = mean_std([1.0, 2.0, 3.0])
    assert mean == 2.0 and std == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mean_std([])


def test_ensemble_of_one_is_the_model():
    model = constant_model(0.3)
    volume = torch.rand(4, 32, 32)
    assert ensemble_predict([model], volume).item() == pytest.approx(0.3)


def test_ensemble_averages_probabilities():
    volume = torch.rand(4, 32, 32)
    assert ensemble_predict([constant_model(0.2), constant_model(0.8)], volume).item() == pytest.approx(0.5)


def test_ensemble_rejects_mixed_specs():
    other = constant_model(0.5, ModelSpec.from_preset("cnn_meanpool", "desk_scale", input={"n_slices": 4}, aggregator={"lstm_hidden": 8}))
    with pytest.raises(SpecMismatchError):
        ensemble_predict([constant_model(0.5), other], torch.rand(4, 32, 32))
    with pytest.raises(ValueError):
        ensemble_predict([], torch.rand(4, 32, 32))


def test_ensemble_of_copies_matches_member():
    """Scoring k copies of one model gives that model's metrics and zero spread."""
    model = build_model(quick_spec(), seed=0).eval()
    examples = synthetic_examples()
    folds, ensemble, rows = score_examples([model, model, model], examples)
    report = MetricsReport.from_folds(
        folds, architecture="cnn_meanpool", preset="desk_scale", init="random", encoder_mode="end_to_end",
        n_params=0, flops=0, ensemble_auroc=auroc(ensemble, [e.label for e in examples]),
        ensemble_prauc=prauc(ensemble, [e.label for e in examples]), config_hash="x", seed=0, version="t",
    )
    assert report.auroc_std == 0.0 and report.prauc_std == 0.0
    assert report.ensemble_auroc == pytest.approx(folds[0].auroc)
    assert len(rows) == 4 * len(examples)
    assert {r["fold"] for r in rows} == {0, 1, 2, "ensemble"}


def test_topk_overlap():
    """Saturated top-k gives the lesion share; uniform weights give chance."""
    weights = np.random.default_rng(0).uniform(size=10)
    assert topk_overlap(weights, [2, 3, 4], top_k=10) == pytest.approx(0.3)
    assert topk_overlap(np.ones(10), [2, 3, 4], top_k=4) == pytest.approx(0.3)
    peaked = np.zeros(10)
    peaked[[2, 3]] = 1.0
    assert topk_overlap(peaked, [2, 3, 4], top_k=2) == 1.0
    with pytest.raises(ValueError):
        topk_overlap(weights, [1], top_k=0)


def test_attention_overlap_requires_trace():
    examples = [LabelledExample("P0", 0, torch.rand(4, 32, 32), 1, (1, 2))]
    with pytest.raises(AttentionUnavailableError):
        attention_overlap(build_model(ModelSpec.from_preset("i3d", "desk_scale", input={"n_slices": 4})), examples)
    model = build_model(ModelSpec.from_preset("cnn_bilstm", "desk_scale", input={"n_slices": 4}), seed=0)
    result = attention_overlap(model, examples, top_k=4)
    assert result.overlap == pytest.approx(0.5) and result.chance == pytest.approx(0.5)
    assert result.to_dict()["n_volumes"] == 1
    with pytest.raises(TrainingDataError):
        attention_overlap(model, [LabelledExample("P1", 0, torch.rand(4, 32, 32), 0)], top_k=4)


def test_format_mean_std():
    assert format_mean_std(0.766, 0.012) == "0.766±0.012"


def _report(**updates):
    folds = [FoldMetrics(fold=i, auroc=a, prauc=p, n_scans=10, n_positive=3) for i, (a, p) in enumerate([(0.7, 0.4), (0.8, 0.5)])]
    fields = dict(
        architecture="cnn_bilstm", preset="desk_scale", init="random", encoder_mode="end_to_end", n_params=1234,
        flops=5_000_000, ensemble_auroc=0.76, ensemble_prauc=0.47, config_hash="abcdef0123456789", seed=0, version="0.1.0",
    )
    fields.update(updates)
    return MetricsReport.from_folds(folds, **fields)


def test_report_summary_consistency():
    report = _report()
    assert report.auroc_mean == pytest.approx(0.75)
    with pytest.raises(ValueError):
        MetricsReport.from_folds([], **{k: v for k, v in _report().model_dump().items() if k not in ("folds", "auroc_mean", "auroc_std", "prauc_mean", "prauc_std")})
    tampered = report.model_dump()
    tampered["auroc_mean"] = 0.9
    with pytest.raises(ValueError):
        MetricsReport(**tampered)


def test_write_report_is_byte_stable(tmp_path):
    report = _report()
    first = [p.read_bytes() for p in write_report(report, tmp_path / "a")]
    second = [p.read_bytes() for p in write_report(report, tmp_path / "b")]
    assert first == second
    assert read_report(tmp_path / "a" / "report.json") == report
    text = (tmp_path / "a" / "report.txt").read_text(encoding="utf-8")
    assert "0.750±0.071" in text and "1K" in text


def test_write_report_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ArtifactIOError):
        write_report(_report(), blocker / "out")


def test_write_predictions(tmp_path):
    path = write_predictions([{"patient_id": "P1", "visit_day": 30, "label": 1, "score": 0.25, "fold": "ensemble"}], tmp_path / "p.csv")
    assert path.read_text().splitlines() == ["patient_id,visit_day,label,score,fold", "P1,30,1,0.25,ensemble"]


def test_holdout_isolation():
    check_holdout_isolation(DatasetSplit(holdout=("A",), folds=(("B",), ("C",))))
    with pytest.raises(ValueError):
        check_holdout_isolation(DatasetSplit(holdout=("A",), folds=(("A",), ("C",))))


def test_fold_seeds_differ():
    seeds = {fold_seed(0, k) for k in range(4)} | {fold_seed(1, k) for k in range(4)}
    assert len(seeds) == 8
    assert fold_seed(3, 1) == fold_seed(3, 1)


def test_subsample_keeps_both_classes():
    examples = synthetic_examples(n=20)
    kept = subsample_examples(examples, 0.1, seed=0)
    assert sorted(e.label for e in kept) == [0, 1]
    assert [e.patient_id for e in subsample_examples(examples, 0.1, seed=0)] == [e.patient_id for e in kept]
    assert len(subsample_examples(examples, 1.0, seed=0)) == len(examples)


def test_training_needs_both_classes():
    examples = [e for e in synthetic_examples() if e.label == 0]
    with pytest.raises(TrainingDataError):
        train_model(quick_config(), quick_spec(), examples)


def test_nan_input_aborts_with_checkpoint(tmp_path):
    """A non-finite forward stops training and leaves the last good weights on disk."""
    examples = synthetic_examples(nan_index=1)
    with pytest.raises(NumericalAbortError) as excinfo:
        train_model(quick_config(), quick_spec(), examples, fold=0, checkpoint_dir=tmp_path)
    assert excinfo.value.last_good_checkpoint == str(tmp_path / "fold0_last_good.ckpt")
    restored = load_model(tmp_path / "fold0_last_good.ckpt")
    assert all(torch.isfinite(t).all() for t in restored.state_dict().values())
    assert excinfo.value.exit_code == 5


def test_one_epoch_training_logs():
    result = train_model(quick_config(), quick_spec(), synthetic_examples(), synthetic_examples(n=4), seed=0)
    assert len(result.epochs) == 1
    assert np.isfinite(result.epochs[0].loss)
    assert result.pos_weight == 1.0
    assert not result.model.training


def test_crossval_contract(tmp_path, tiny_cohort, tiny_preprocess):
    """k folds give k checkpoints and k holdout rows; holdout patients never train."""
    cfg = quick_config()
    split = split_dataset(tiny_cohort, cfg.holdout_frac, cfg.k_folds, cfg.seed)
    result = run_crossval(cfg, quick_spec(), tiny_cohort, split, tiny_preprocess, out_dir=tmp_path, config_hash="h")
    assert len(result.checkpoints) == 2 and all(p.exists() for p in result.checkpoints)
    assert len(result.report.folds) == 2
    assert {r["patient_id"] for r in result.predictions} <= set(split.holdout)
    for fold in range(split.k):
        assert not set(split.train_ids(fold)) & set(split.holdout)


def test_crossval_is_deterministic(tiny_cohort, tiny_preprocess):
    """The same seed and config give byte-identical reports."""
    cfg = quick_config()
    split = split_dataset(tiny_cohort, cfg.holdout_frac, cfg.k_folds, cfg.seed)
    examples = build_examples(tiny_cohort, cfg.window_days, tiny_preprocess)
    a = run_crossval(cfg, quick_spec(), tiny_cohort, split, tiny_preprocess, examples=examples)
    b = run_crossval(cfg, quick_spec(), tiny_cohort, split, tiny_preprocess, examples=examples)
    assert report_json(a.report) == report_json(b.report)


def test_lesion_slice_dataset(tiny_cohort, tiny_preprocess):
    slices, labels, patients = lesion_slice_dataset(tiny_cohort, tiny_preprocess, max_per_class=20)
    assert slices.shape[1:] == (1, 32, 32)
    assert set(labels.tolist()) == {0, 1}
    assert len(patients) == len(labels) == slices.shape[0]


def _separable_cohort(tiny_params):
    from src.synthcohort.generator import generate_cohort

    return generate_cohort(
        tiny_params.model_copy(update={"n_patients": 40, "lesion_amplitude": 0.8, "lesion_growth_rate": 0.5, "noise_level": 0.01})
    )


@pytest.mark.slow
def test_bilstm_fits_separable_cohort(tiny_params, tiny_preprocess):
    """Desk cnn_bilstm reaches training AUROC >= 0.95 within 20 epochs and its attention finds lesions."""
    cohort = _separable_cohort(tiny_params)
    examples = gather(build_examples(cohort, 183, tiny_preprocess), [t.patient_id for t in cohort])
    cfg = quick_config(architecture="cnn_bilstm", epochs=20, optimizer=OptimizerConfig(kind="adam", lr=1e-3, batch_size=8))
    result = train_model(cfg, quick_spec("cnn_bilstm"), examples, seed=0)
    from src.harness.data import predict_scores

    assert auroc(predict_scores(result.model, examples), [e.label for e in examples]) >= 0.95
    overlap = attention_overlap(result.model, examples, top_k=2)
    assert overlap.overlap >= 2 * overlap.chance


if __name__ == "__main__":
    pytest.main([__file__])
