import numpy as np
import pytest
import torch

from conftest import make_timeline
from src.errors import SpecMismatchError, TrainingDataError
from src.models.encoder import SliceEncoder
from src.models.spec import ModelSpec
from src.pretrain.augment import contrastive_augment
from src.pretrain.tinc import covariance_term, time_margin, tinc_loss, tinc_terms, variance_term
from src.pretrain.trainer import pretrain_encoder, projector_dim
from src.pretrain.transfer import export_encoder, transfer_weights
from src.tensorcore.checkpoint import load_checkpoint
from src.tensorcore.gradcheck import grad_check
from src.validation.schema import ContrastiveAugmentPolicy, OptimizerConfig, PretrainConfig, TINCLossConfig


def f64(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def desk_spec(arch="cnn_bilstm", **encoder):
    return ModelSpec.from_preset(arch, "desk_scale", input={"n_slices": 4}, encoder=encoder)


def small_pretrain_config(epochs=1):
    return PretrainConfig(
        epochs=epochs,
        batch_size=4,
        optimizer=OptimizerConfig(kind="adam", lr=1e-3, weight_decay=1e-6, batch_size=4),
        seed=0,
    )


def test_identical_branches_leave_only_regularisers():
    """Equal projections have zero similarity term for any time gap."""
    cfg = TINCLossConfig()
    z = f64(8, 5)
    terms = tinc_terms(z, z.clone(), torch.full((8,), 200.0), cfg)
    assert terms.similarity.item() == 0.0
    expected = cfg.var_coeff * variance_term(z, cfg.var_target) + cfg.cov_coeff * covariance_term(z)
    assert torch.allclose(tinc_loss(z, z.clone(), [200.0] * 8, cfg), expected)


def test_margin_grows_with_time_gap():
    """At distance m_max/2 the term vanishes from half the horizon on and is positive near zero gap."""
    cfg = TINCLossConfig(normalize=False, var_coeff=0.0, cov_coeff=0.0)
    z1 = torch.zeros(2, 3, dtype=torch.float64)
    z2 = z1.clone()
    z2[:, 0] = 0.5 * cfg.margin

    def similarity(dt):
        return tinc_terms(z1, z2, torch.full((2,), float(dt)), cfg).similarity.item()

    assert similarity(cfg.max_delta_days / 2) == 0.0
    assert similarity(cfg.max_delta_days * 3) == 0.0
    assert similarity(0.0) == pytest.approx(0.5 * cfg.margin)
    values = [similarity(dt) for dt in np.linspace(0, cfg.max_delta_days, 25)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_time_margin_saturates():
    cfg = TINCLossConfig(margin=2.0, max_delta_days=100.0)
    margins = time_margin(torch.tensor([0.0, 50.0, 100.0, 400.0]), cfg)
    assert torch.allclose(margins, torch.tensor([0.0, 1.0, 2.0, 2.0]))


def test_tinc_loss_non_negative():
    cfg = TINCLossConfig()
    for seed in range(5):
        z1, z2 = f64(6, 4, seed=seed), f64(6, 4, seed=seed + 10)
        dt = torch.rand(6, generator=torch.Generator().manual_seed(seed), dtype=torch.float64) * 720
        assert tinc_loss(z1, z2, dt, cfg).item() >= 0.0


def test_variance_term_penalises_collapse():
    collapsed = torch.ones(8, 3, dtype=torch.float64)
    spread = f64(8, 3) * 3.0
    assert variance_term(collapsed, 1.0).item() > variance_term(spread, 1.0).item()


def test_tinc_gradient():
    """Away from the hinge kinks the loss gradient matches finite differences."""
    cfg = TINCLossConfig()
    z1, z2 = 0.3 * f64(6, 4, seed=1), 0.3 * f64(6, 4, seed=2)
    dt = torch.tensor([30.0, 60.0, 90.0, 30.0, 60.0, 90.0], dtype=torch.float64)
    report = grad_check(lambda a, b: tinc_loss(a, b, dt, cfg), [z1, z2])
    assert report.passed, report.summary()


def test_tinc_input_checks():
    cfg = TINCLossConfig()
    with pytest.raises(ValueError):
        tinc_loss(f64(1, 4), f64(1, 4), [10.0], cfg)
    with pytest.raises(ValueError):
        tinc_loss(f64(3, 4), f64(3, 5), [10.0] * 3, cfg)
    with pytest.raises(ValueError):
        tinc_loss(f64(3, 4), f64(3, 4), [10.0, -1.0, 5.0], cfg)


def test_contrastive_augment_is_seeded():
    image = torch.rand(32, 32)
    policy = ContrastiveAugmentPolicy()
    a = contrastive_augment(image, np.random.default_rng(3), policy)
    b = contrastive_augment(image, np.random.default_rng(3), policy)
    assert torch.equal(a, b)
    assert a.shape == image.shape
    assert a.min().item() >= 0.0 and a.max().item() <= 1.0


def test_projector_dim():
    assert projector_dim(64, PretrainConfig()) == 256
    assert projector_dim(32, PretrainConfig()) == 128
    assert projector_dim(64, PretrainConfig(projector_dim=16)) == 16


def test_pretrain_needs_multi_visit_patients(tiny_preprocess):
    single = [make_timeline(patient_id=f"P{i}", days=(0,)) for i in range(4)]
    with pytest.raises(TrainingDataError):
        pretrain_encoder(single, desk_spec().encoder, small_pretrain_config(), tiny_preprocess)


def test_one_pretraining_epoch(tiny_cohort, tiny_preprocess):
    """One desk-scale epoch finishes with a finite logged loss."""
    cfg = small_pretrain_config()
    result = pretrain_encoder(tiny_cohort, desk_spec().encoder, cfg, tiny_preprocess)
    assert len(result.loss_history) == 1
    assert np.isfinite(result.loss_history[0])
    log = result.log_dict(cfg)
    assert log["epochs"][0]["epoch"] == 1
    assert set(log["epochs"][0]) >= {"loss", "similarity", "variance", "covariance"}
    assert not result.encoder.training


def test_pretraining_is_seeded(tiny_cohort, tiny_preprocess):
    cfg = small_pretrain_config()
    a = pretrain_encoder(tiny_cohort, desk_spec().encoder, cfg, tiny_preprocess)
    b = pretrain_encoder(tiny_cohort, desk_spec().encoder, cfg, tiny_preprocess)
    assert a.loss_history == b.loss_history


@pytest.mark.slow
def test_pretraining_loss_decreases(tiny_cohort, tiny_preprocess):
    """Epoch 5 ends no higher than epoch 1 at a pinned seed."""
    result = pretrain_encoder(tiny_cohort, desk_spec().encoder, small_pretrain_config(epochs=5), tiny_preprocess)
    assert result.loss_history[4] <= result.loss_history[0]


def test_transfer_round_trip_is_lossless(tmp_path):
    """Copying into a 2.5D model and exporting again reproduces the checkpoint bytes."""
    spec = desk_spec()
    torch.manual_seed(0)
    encoder = SliceEncoder(spec.encoder)
    encoder(torch.rand(4, 1, 32, 32))
    encoder.eval()
    source = export_encoder(encoder, spec.encoder, tmp_path / "encoder.ckpt")
    for arch in ("cnn_bilstm", "cnn_transformer", "cnn_meanpool"):
        model, log = transfer_weights(source, desk_spec(arch), seed=1)
        again = export_encoder(model.encoder, spec.encoder, tmp_path / f"{arch}.ckpt")
        assert again.read_bytes() == source.read_bytes()
        assert all(e.action == "copied" for e in log.entries)


def test_transfer_inflates_into_i3d(tmp_path):
    """Every I3D kernel sums over depth back to its 2D source."""
    spec = desk_spec("i3d")
    torch.manual_seed(0)
    source = export_encoder(SliceEncoder(spec.encoder), spec.encoder, tmp_path / "encoder.ckpt")
    model, log = transfer_weights(source, spec, frozen=True, seed=0)
    tensors = load_checkpoint(source).tensors
    inflated = [e for e in log.entries if e.action.startswith("inflated")]
    assert inflated and log.frozen
    for name, tensor in model.encoder.state_dict().items():
        if tensor.ndim == 5:
            assert torch.allclose(tensor.sum(dim=2), tensors[name], atol=1e-6), name
        else:
            assert torch.equal(tensor.to(torch.float32), tensors[name]), name
    assert all(not p.requires_grad for p in model.encoder.parameters())
    assert "conv1.weight" in log.to_dict()["entries"][0]["name"]


def test_transfer_rejects_mismatched_encoder(tmp_path):
    """A different embedding width fails and names the first layer that differs."""
    spec = desk_spec()
    source = export_encoder(SliceEncoder(spec.encoder), spec.encoder, tmp_path / "encoder.ckpt")
    wider = desk_spec(stage_planes=(4, 8, 12, 32))
    with pytest.raises(SpecMismatchError) as excinfo:
        transfer_weights(source, wider)
    assert "layer4" in str(excinfo.value)
    assert excinfo.value.diff[0].startswith("layer4")
    assert any("stage_planes" in line for line in excinfo.value.diff)


def test_transfer_rejects_model_without_encoder(tmp_path):
    spec = desk_spec()
    source = export_encoder(SliceEncoder(spec.encoder), spec.encoder, tmp_path / "encoder.ckpt")
    with pytest.raises(SpecMismatchError):
        transfer_weights(source, desk_spec("vivit_fsa"))


if __name__ == "__main__":
    pytest.main([__file__])
