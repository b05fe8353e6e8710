"""Self-check suites run by ``verify``: gradients, inflation, metric oracles, determinism, accounting."""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import torch

from src.config import precision_scope
from src.harness.metrics import auroc, prauc, ranking_order
from src.models.accounting import count_flops, count_params
from src.models.aggregators import SEAttention
from src.models.encoder import SliceEncoder
from src.models.factory import build_model
from src.models.i3d import I3DEncoder, inflate_kernel
from src.models.spec import ModelSpec
from src.pretrain.tinc import tinc_loss
from src.tensorcore import layers
from src.tensorcore.checkpoint import encode_checkpoint, module_tensors
from src.tensorcore.gradcheck import grad_check
from src.tensorcore.losses import bce_loss
from src.validation.schema import TINCLossConfig

logger = logging.getLogger(__name__)

ARCHITECTURES = ("cnn_bilstm", "cnn_transformer", "cnn_meanpool", "i3d", "vivit_fsa")
FAULTS = ("inflation",)

# paper-scale targets: (params, FLOPs)
PAPER_SCALE_TARGETS = {"cnn_bilstm": (34e6, 130e9), "cnn_transformer": (108e6, 133e9)}


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    checks: List[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
            "checks": [vars(c) for c in self.checks],
        }


def pairwise_auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(N^2) count of positive/negative pairs, ties worth one half."""
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def sweep_prauc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Precision at every cut of the ranked list that ends on a positive, averaged."""
    order = ranking_order(scores)
    total, hits = 0.0, 0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            total += hits / rank
    return total / hits


def _grad(name: str, tolerance: float, forward, inputs, **kwargs) -> Check:
    report = grad_check(forward, inputs, tolerance=tolerance, **kwargs)
    return Check(f"grad {name}", report.passed, report.summary())


def gradient_suite(seed: int = 0) -> List[Check]:
    g = torch.Generator().manual_seed(seed)

    def rand(*shape):
        return torch.randn(*shape, generator=g, dtype=torch.float64)

    checks = []
    with precision_scope("float64"):
        w, b = rand(5, 7), rand(5)
        checks.append(_grad("dense_block", 1e-6, lambda x, w, b: layers.dense_block(x, w, b, "tanh"), [rand(3, 7), w, b]))
        labels = torch.tensor([0.0, 1.0, 1.0, 0.0, 1.0], dtype=torch.float64)
        checks.append(_grad("bce_loss", 1e-6, lambda z: bce_loss(z, labels, 3.0).reshape(1), [rand(5)]))
        checks.append(_grad("conv2d", 1e-5, lambda x, k: layers.conv2d(x, k, 2, 1), [rand(2, 3, 7, 7), rand(4, 3, 3, 3)]))
        checks.append(_grad("conv3d", 1e-5, lambda x, k: layers.conv3d(x, k, 1, 1), [rand(1, 2, 4, 5, 5), rand(3, 2, 3, 3, 3)]))
        checks.append(_grad("pool avg", 1e-5, lambda x: layers.pool(x, "avg", 2), [rand(2, 3, 6, 6)]))
        checks.append(_grad("pool max", 1e-5, lambda x: layers.pool(x, "max", 2), [rand(2, 3, 6, 6)]))
        lstm = layers.BiLSTM(8, 6)
        checks.append(_grad("bilstm_forward", 1e-5, lstm, [rand(4, 8)]))
        attn = layers.MultiHeadSelfAttention(8, 2)
        checks.append(_grad("multi_head_attention", 1e-5, lambda x: attn(x)[0], [rand(5, 8)], parameters=attn.named_parameters()))
        norm = torch.nn.LayerNorm(6)
        checks.append(
            _grad(
                "norm_and_droppath",
                1e-5,
                lambda x: layers.norm_and_droppath(x, "layer_norm", norm),
                [rand(4, 6)],
                parameters=norm.named_parameters(),
            )
        )
        se = SEAttention(8, 4)
        checks.append(_grad("se_attention", 1e-5, lambda f: se(f)[1], [rand(8, 6)], parameters=se.named_parameters()))
        cfg = TINCLossConfig(normalize=False, margin=0.5)
        gaps = torch.tensor([0.0, 200.0, 720.0, 90.0], dtype=torch.float64)
        z2 = rand(4, 6)
        checks.append(_grad("tinc_loss", 1e-5, lambda z1: tinc_loss(z1, z2, gaps, cfg).reshape(1), [z2 + 2.0 * rand(4, 6)]))
        for arch in ARCHITECTURES:
            spec = ModelSpec.from_preset(arch, "desk_scale")
            model = build_model(spec, seed=seed).eval()
            volume = torch.rand(2, spec.input.n_slices, spec.input.height, spec.input.width, generator=g, dtype=torch.float64)
            checks.append(_grad(f"{arch} (desk)", 1e-5, model, [volume], mode="directional"))
    return checks


def inflation_suite(seed: int = 0, fault: Optional[str] = None) -> List[Check]:
    """Depth-constant input through an inflated encoder must reproduce the 2D activations at interior depths."""
    checks = []
    with precision_scope("float64"):
        spec = ModelSpec.from_preset("i3d", "desk_scale")
        torch.manual_seed(seed)
        encoder2d = SliceEncoder(spec.encoder).eval()
        encoder3d = I3DEncoder(spec.encoder, spec.aggregator.stem_depth, spec.aggregator.conv_depth).eval()
        state3d = encoder3d.state_dict()
        inflated = {}
        exact = True
        for name, tensor in encoder2d.state_dict().items():
            if state3d[name].ndim == 5:
                inflated[name] = inflate_kernel(tensor, state3d[name].shape[2])
                exact &= torch.allclose(inflated[name].sum(dim=2), tensor, rtol=1e-12, atol=1e-15)
            else:
                inflated[name] = tensor.clone()
        checks.append(Check("inflated kernels sum back to 2D kernels", bool(exact)))
        if fault == "inflation":
            inflated["layer1.0.conv2.weight"][:, :, 0] += 0.05
        encoder3d.load_state_dict(inflated)

        # BN statistics that are not the identity make the check meaningful
        for m in encoder2d.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.running_mean.uniform_(-0.1, 0.1)
                m.running_var.uniform_(0.5, 1.5)
        for name, module in encoder3d.named_modules():
            if isinstance(module, torch.nn.BatchNorm3d):
                source = encoder2d.get_submodule(name)
                module.running_mean.copy_(source.running_mean)
                module.running_var.copy_(source.running_var)

        s, h, w = spec.input.n_slices, spec.input.height, spec.input.width
        image = torch.rand(1, 1, h, w, dtype=torch.float64)
        with torch.no_grad():
            reference = encoder2d.features(image)
            volume = encoder3d.features(image.unsqueeze(2).expand(1, 1, s, h, w).contiguous())
        radius = spec.aggregator.stem_depth // 2 + sum(spec.encoder.stage_blocks) * (spec.aggregator.conv_depth // 2)
        interior = range(radius, s - radius)
        if not interior:
            checks.append(Check("inflation equivalence", False, f"no interior slices for {s} slices and radius {radius}"))
            return checks
        worst = max((volume[:, :, d] - reference).abs().max().item() for d in interior)
        checks.append(
            Check("inflation equivalence", worst <= 1e-6, f"max abs diff {worst:.2e} over depths {interior.start}..{interior.stop - 1}")
        )
    return checks


def metric_suite(seed: int = 0, instances: int = 1000) -> List[Check]:
    rng = np.random.default_rng(seed)
    auroc_ok, prauc_worst, monotone_ok = True, 0.0, True
    for _ in range(instances):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, size=n)
        labels[rng.integers(0, n)] = 1
        labels[rng.integers(0, n)] = 0
        if labels.min() == labels.max():
            continue
        # coarse scores so ties occur
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))
        auroc_ok &= auroc(scores, labels) == pairwise_auroc(scores, labels)
        prauc_worst = max(prauc_worst, abs(prauc(scores, labels) - sweep_prauc(scores, labels)))
        value = auroc(scores, labels)
        monotone_ok &= auroc(np.exp(scores), labels) == value and auroc(3.0 * scores - 1.0, labels) == value
    return [
        Check("auroc equals pairwise oracle", bool(auroc_ok), f"{instances} instances"),
        Check("prauc equals threshold sweep", prauc_worst <= 1e-12, f"max abs diff {prauc_worst:.1e}"),
        Check("auroc invariant to monotone transforms", bool(monotone_ok)),
    ]


def determinism_suite(seed: int = 0) -> List[Check]:
    checks = []
    for arch in ARCHITECTURES:
        spec = ModelSpec.from_preset(arch, "desk_scale")
        first = encode_checkpoint(module_tensors(build_model(spec, seed=seed)), spec.spec_hash(), "float32")
        second = encode_checkpoint(module_tensors(build_model(spec, seed=seed)), spec.spec_hash(), "float32")
        checks.append(Check(f"{arch} init bytes reproducible", first == second))
    spec = ModelSpec.from_preset("cnn_bilstm", "desk_scale")
    model = build_model(spec, seed=seed).eval()
    volume = torch.rand(2, spec.input.n_slices, spec.input.height, spec.input.width, generator=torch.Generator().manual_seed(seed))
    with torch.no_grad():
        checks.append(Check("eval forward repeatable", torch.equal(model(volume), model(volume))))
    return checks


def accounting_suite() -> List[Check]:
    checks = []
    for arch in ARCHITECTURES:
        spec = ModelSpec.from_preset(arch, "desk_scale")
        built = sum(p.numel() for p in build_model(spec, seed=0).parameters())
        checks.append(Check(f"{arch} desk params match built model", built == count_params(spec), f"{count_params(spec)} vs {built}"))
    for arch, (params, flops) in PAPER_SCALE_TARGETS.items():
        spec = ModelSpec.from_preset(arch, "paper_scale")
        p, f = count_params(spec), count_flops(spec)
        checks.append(Check(f"{arch} paper-scale params within 15%", abs(p - params) <= 0.15 * params, f"{p:,} vs {params:,.0f}"))
        checks.append(Check(f"{arch} paper-scale FLOPs within 15%", abs(f - flops) <= 0.15 * flops, f"{f:,} vs {flops:,.0f}"))
    return checks


SUITES: Dict[str, Callable[..., List[Check]]] = {
    "gradients": gradient_suite,
    "inflation": inflation_suite,
    "metrics": metric_suite,
    "determinism": determinism_suite,
    "accounting": accounting_suite,
}


def run_suites(names: Optional[List[str]] = None, seed: int = 0, fault: Optional[str] = None) -> List[SuiteResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    results = []
    for name in names or list(SUITES):
        start = time.perf_counter()
        if name == "inflation":
            checks = inflation_suite(seed, fault)
        elif name == "accounting":
            checks = accounting_suite()
        else:
            checks = SUITES[name](seed)
        result = SuiteResult(name, checks, time.perf_counter() - start)
        logger.info("suite %s: %s (%.1fs)", name, "pass" if result.passed else "FAIL", result.seconds)
        for c in checks:
            if not c.passed:
                logger.warning("  failed: %s %s", c.name, c.detail)
        results.append(result)
    return results
