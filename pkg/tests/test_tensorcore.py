import math

import pytest
import torch
import torch.nn as nn

from src.errors import ArtifactIOError, NonDeterministicError, NumericalAbortError, ShapeError, SpecMismatchError
from src.tensorcore.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    load_into_module,
    module_tensors,
    save_checkpoint,
)
from src.tensorcore.gradcheck import grad_check
from src.tensorcore.layers import (
    BiLSTM,
    DropPath,
    bilstm_forward,
    conv2d,
    conv3d,
    conv_output_size,
    dense_block,
    drop_path,
    layer_norm,
    multi_head_attention,
    pool,
)
from src.tensorcore.losses import bce_loss
from src.tensorcore.optim import LRSchedule, OptimizerState, cosine_lr, optimizer_step
from src.validation.schema import OptimizerConfig


def f64(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_conv2d_identity_kernel():
    """A 1x1 identity kernel returns the input."""
    x = torch.rand(1, 3, 5, 5)
    kernel = torch.eye(3).reshape(3, 3, 1, 1)
    assert torch.allclose(conv2d(x, kernel), x)


def test_conv2d_sums_window():
    """All-ones 2x2 kernel over [[1, 2], [3, 4]] gives 10."""
    x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert conv2d(x, torch.ones(1, 1, 2, 2)).item() == 10.0


def test_conv_output_size():
    assert conv_output_size(224, 7, 2, 3) == 112
    out = conv2d(torch.rand(1, 3, 224, 224), torch.rand(4, 3, 7, 7), stride=2, padding=3)
    assert out.shape == (1, 4, 112, 112)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        conv2d(torch.rand(1, 2, 5, 5), torch.rand(1, 3, 3, 3))
    with pytest.raises(ShapeError):
        conv2d(torch.rand(1, 1, 2, 2), torch.rand(1, 1, 3, 3))
    with pytest.raises(ShapeError):
        conv3d(torch.rand(1, 1, 4, 4), torch.rand(1, 1, 1, 3, 3))


def test_conv3d_depth_constant_input():
    """Without depth padding a depth-constant input gives equal output slices."""
    x = torch.rand(1, 2, 1, 6, 6).repeat(1, 1, 5, 1, 1)
    out = conv3d(x, torch.rand(3, 2, 3, 3, 3), padding=(0, 1, 1))
    assert out.shape == (1, 3, 3, 6, 6)
    assert torch.allclose(out[:, :, 0], out[:, :, 1]) and torch.allclose(out[:, :, 1], out[:, :, 2])


def test_conv3d_zero_kernel():
    out = conv3d(torch.rand(1, 1, 3, 4, 4), torch.zeros(2, 1, 3, 3, 3), padding=1)
    assert torch.equal(out, torch.zeros_like(out))


def test_dense_block_identity():
    x = torch.rand(4, 3)
    assert torch.equal(dense_block(x, torch.eye(3), torch.zeros(3), "none"), x)
    with pytest.raises(ValueError):
        dense_block(x, torch.eye(3), activation="softsign")


def test_pooling():
    assert torch.allclose(pool(torch.full((1, 2, 3, 3), 2.5), "global_avg"), torch.full((1, 2), 2.5))
    x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert pool(x, "max", 2).item() == 4.0
    assert pool(x, "avg", 2).item() == 2.5
    with pytest.raises(ShapeError):
        pool(x, "max", 3)


def test_bilstm_output_shape():
    """32 slices of 2048 features with hidden 512 give a 32 x 1024 sequence."""
    module = BiLSTM(2048, 512)
    assert module(torch.rand(32, 2048)).shape == (32, 1024)


def test_bilstm_single_step_directions_agree():
    """With mirrored weights both directions see the same single step."""
    module = BiLSTM(4, 3)
    lstm = module.lstm
    with torch.no_grad():
        for name in ("weight_ih_l0", "weight_hh_l0", "bias_ih_l0", "bias_hh_l0"):
            getattr(lstm, f"{name}_reverse").copy_(getattr(lstm, name))
    out = module(torch.rand(1, 4))
    assert torch.allclose(out[0, :3], out[0, 3:])


def test_bilstm_rejects_wrong_hidden():
    with pytest.raises(ShapeError):
        bilstm_forward(torch.rand(3, 4), BiLSTM(4, 3).lstm, hidden_size=5)


def _attention_weights(dim, seed=0):
    return f64(3 * dim, dim, seed=seed), f64(3 * dim, seed=seed + 1), f64(dim, dim, seed=seed + 2), f64(dim, seed=seed + 3)


def test_attention_single_token():
    """One token attends only to itself; the output is its projected value."""
    dim = 4
    qkv_w, qkv_b, out_w, out_b = _attention_weights(dim)
    x = f64(1, dim, seed=9)
    out, attn = multi_head_attention(x, qkv_w, qkv_b, out_w, out_b, heads=2)
    assert torch.allclose(attn, torch.ones(2, 1, 1, dtype=torch.float64))
    value = x @ qkv_w[2 * dim :].T + qkv_b[2 * dim :]
    assert torch.allclose(out, value @ out_w.T + out_b)


def test_attention_identical_tokens_uniform():
    dim = 4
    qkv_w, qkv_b, out_w, out_b = _attention_weights(dim)
    x = f64(1, dim, seed=5).repeat(5, 1)
    _, attn = multi_head_attention(x, qkv_w, qkv_b, out_w, out_b, heads=2)
    assert torch.allclose(attn, torch.full((2, 5, 5), 0.2, dtype=torch.float64))


def test_attention_head_divisibility():
    qkv_w, qkv_b, out_w, out_b = _attention_weights(4)
    with pytest.raises(ShapeError):
        multi_head_attention(f64(2, 4), qkv_w, qkv_b, out_w, out_b, heads=3)


def test_drop_path_and_layer_norm():
    x = torch.rand(4, 6)
    assert torch.equal(drop_path(x, 0.0, training=True), x)
    assert torch.equal(drop_path(x, 0.5, training=False), x)
    assert torch.allclose(layer_norm(torch.full((2, 5), 3.0)), torch.zeros(2, 5))
    with pytest.raises(ValueError):
        DropPath(1.0)


def test_drop_path_zeroes_whole_samples():
    torch.manual_seed(0)
    out = drop_path(torch.ones(64, 3), 0.5, training=True)
    rows = set(out[:, 0].tolist())
    assert rows <= {0.0, 2.0}
    assert all(len(set(r.tolist())) == 1 for r in out)


def test_bce_values():
    """Logit 0 with label 1 costs ln 2; a confident correct logit costs nothing."""
    assert bce_loss(torch.tensor([0.0], dtype=torch.float64), [1]).item() == pytest.approx(math.log(2))
    confident = bce_loss(torch.tensor([50.0], dtype=torch.float64), [1])
    assert torch.isfinite(confident) and confident.item() <= 1e-20


def test_bce_pos_weight():
    plain = bce_loss(torch.tensor([0.0]), [1]).item()
    assert bce_loss(torch.tensor([0.0]), [1], pos_weight=3.0).item() == pytest.approx(3 * plain)
    assert bce_loss(torch.tensor([0.0]), [0], pos_weight=3.0).item() == pytest.approx(plain)


def test_bce_rejects_bad_input():
    with pytest.raises(ValueError):
        bce_loss(torch.tensor([float("nan")]), [1])
    with pytest.raises(ValueError):
        bce_loss(torch.tensor([0.0]), [2])


def test_zero_gradient_leaves_parameters():
    p = nn.Parameter(torch.tensor([1.0, -2.0]))
    state = OptimizerState([("p", p)], OptimizerConfig(kind="adam", lr=0.1))
    p.grad = torch.zeros(2)
    optimizer_step(state)
    assert torch.equal(p.detach(), torch.tensor([1.0, -2.0]))


def test_adam_first_step_closed_form():
    """Bias-corrected first Adam step moves each weight by lr * g / (|g| + eps)."""
    lr, eps = 0.01, 1e-8
    p = nn.Parameter(torch.tensor([0.5, 0.5], dtype=torch.float64))
    state = OptimizerState([("p", p)], OptimizerConfig(kind="adam", lr=lr, eps=eps))
    g = torch.tensor([0.3, -2.0], dtype=torch.float64)
    p.grad = g.clone()
    optimizer_step(state)
    expected = torch.tensor([0.5, 0.5], dtype=torch.float64) - lr * g / (g.abs() + eps)
    assert torch.allclose(p.detach(), expected, atol=1e-12)
    assert state.step_count == 1
    assert set(state.buffers("p")) >= {"exp_avg", "exp_avg_sq"}


def test_sgd_weight_decay_is_l2():
    p = nn.Parameter(torch.tensor([1.0], dtype=torch.float64))
    state = OptimizerState([("p", p)], OptimizerConfig(kind="sgd_momentum", lr=0.1, momentum=0.0, weight_decay=0.5))
    p.grad = torch.zeros(1, dtype=torch.float64)
    optimizer_step(state)
    assert p.item() == pytest.approx(1.0 - 0.1 * 0.5)


def test_nan_gradient_aborts_without_update():
    p = nn.Parameter(torch.tensor([1.0]))
    q = nn.Parameter(torch.tensor([2.0]))
    state = OptimizerState([("p", p), ("q", q)], OptimizerConfig(kind="adam", lr=0.1))
    p.grad = torch.tensor([0.5])
    q.grad = torch.tensor([float("nan")])
    with pytest.raises(NumericalAbortError, match="q"):
        optimizer_step(state)
    assert p.item() == 1.0 and q.item() == 2.0


def test_cosine_schedule():
    schedule = LRSchedule(base_lr=0.1, total_steps=100)
    assert cosine_lr(schedule, 0) == pytest.approx(0.1)
    assert cosine_lr(schedule, 50) == pytest.approx(0.05)
    assert cosine_lr(schedule, 100) == 0.0
    assert cosine_lr(schedule, 500) == 0.0
    with pytest.raises(ValueError):
        cosine_lr(schedule, -1)


def test_cosine_warmup_and_floor():
    schedule = LRSchedule(base_lr=1.0, total_steps=20, min_lr=0.1, warmup_steps=10)
    assert cosine_lr(schedule, 0) == pytest.approx(0.1)
    assert cosine_lr(schedule, 5) == pytest.approx(0.55)
    assert cosine_lr(schedule, 10) == pytest.approx(1.0)
    assert cosine_lr(schedule, 20) == pytest.approx(0.1)
    lrs = [cosine_lr(schedule, s) for s in range(10, 21)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_grad_check_dense():
    w, b = nn.Parameter(f64(5, 4, seed=1)), nn.Parameter(f64(5, seed=2))
    report = grad_check(lambda x: dense_block(x, w, b, "tanh"), [f64(3, 4)], tolerance=1e-6, parameters=[("w", w), ("b", b)])
    assert report.passed, report.summary()


def test_grad_check_convolutions():
    k2 = nn.Parameter(f64(2, 3, 3, 3, seed=1))
    report = grad_check(lambda x: conv2d(x, k2, stride=2, padding=1), [f64(1, 3, 6, 6)], parameters=[("k", k2)])
    assert report.passed, report.summary()
    k3 = nn.Parameter(f64(2, 1, 3, 3, 3, seed=3))
    report = grad_check(lambda x: conv3d(x, k3, padding=1), [f64(1, 1, 4, 5, 5)], parameters=[("k", k3)])
    assert report.passed, report.summary()


def test_grad_check_bilstm():
    """S=4, D=8, H=6 matches finite differences."""
    module = BiLSTM(8, 6).double()
    report = grad_check(module, [f64(4, 8)])
    assert report.passed, report.summary()
    assert "lstm.weight_hh_l0_reverse" in report.per_tensor


class _WrongSquare(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x**2

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * 3 * x


def test_grad_check_catches_wrong_gradient():
    for mode in ("coordinate", "directional"):
        report = grad_check(_WrongSquare.apply, [f64(5) + 3.0], mode=mode)
        assert not report.passed


def test_grad_check_requires_eval_drop_path():
    module = nn.Sequential(nn.Linear(3, 3), DropPath(0.2)).double()
    with pytest.raises(NonDeterministicError):
        grad_check(module, [f64(2, 3)])
    module.eval()
    assert grad_check(module, [f64(2, 3)]).passed


def test_grad_check_needs_float64():
    with pytest.raises(ValueError):
        grad_check(lambda x: x * 2, [torch.rand(3)])


def test_checkpoint_round_trip(tmp_path):
    """Parameters and buffers survive a save/load cycle with their kinds."""
    module = nn.Sequential(nn.Linear(3, 2), nn.BatchNorm1d(2))
    module(torch.rand(4, 3))
    path = save_checkpoint(tmp_path / "m.ckpt", module_tensors(module), "abc", metadata={"kind": "test"})
    assert path.read_bytes()[:8] == MAGIC
    ckpt = load_checkpoint(path)
    assert ckpt.spec_hash == "abc" and ckpt.metadata == {"kind": "test"}
    assert ckpt.kinds["1.running_mean"] == "buffer" and ckpt.kinds["0.weight"] == "parameter"
    assert ckpt.parameter_count() == sum(p.numel() for p in module.parameters())

    fresh = nn.Sequential(nn.Linear(3, 2), nn.BatchNorm1d(2))
    load_into_module(fresh, ckpt.tensors)
    for (name, a), b in zip(module.state_dict().items(), fresh.state_dict().values()):
        assert torch.equal(a, b), name
    assert fresh.state_dict()["1.num_batches_tracked"].dtype == torch.long


def test_checkpoint_encoding_is_stable():
    tensors = {"b": (torch.ones(2), "parameter"), "a": (torch.zeros(1, 3), "buffer")}
    blob = encode_checkpoint(tensors, "h", "float32")
    assert blob == encode_checkpoint(dict(reversed(list(tensors.items()))), "h", "float32")
    assert list(decode_checkpoint(blob).tensors) == ["a", "b"]


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(ArtifactIOError):
        load_checkpoint(bad)
    with pytest.raises(ArtifactIOError):
        load_checkpoint(tmp_path / "missing.ckpt")
    with pytest.raises(SpecMismatchError) as excinfo:
        load_into_module(nn.Linear(3, 2), {"weight": torch.zeros(2, 4)})
    assert any("missing: bias" in line for line in excinfo.value.diff)


if __name__ == "__main__":
    pytest.main([__file__])
