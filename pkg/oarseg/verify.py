"""
Gradient verification suite.

Seeded miniature instances of every differentiable operation and block,
each checked against central finite differences in 64-bit precision.
"""

import time
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from oarseg.nn.attention import (
    AttentionConfig,
    attention_exact,
    attention_performer,
    orthogonal_features,
    window_attention,
)
from oarseg.nn.blocks import (
    ASPP,
    PatchEmbed,
    PatchMerging,
    SEBlock,
    SwinBlock,
    TransformerBlock,
    VisionPerformer,
    residual_block,
)
from oarseg.nn.module import BatchNorm2d, Conv2d, ConvTranspose2d, LayerNorm, Linear, Module
from oarseg.tensor import functional as F
from oarseg.tensor.gradcheck import GradCheckReport, grad_check, summarize
from oarseg.tensor.tensor import Tensor, precision
from oarseg.training.loss import dice_ce_loss
from oarseg.utils.logging import Logger
from oarseg.utils.progress import ProgressTracker

# name, fn, inputs, params
Case = Tuple[str, Callable[..., Tensor], List[np.ndarray], Dict[str, Tensor]]

TOLERANCE = 1e-4


def _params(module: Module) -> Dict[str, Tensor]:
    return dict(module.named_parameters())


def _module_case(name: str, module: Module, *inputs: np.ndarray) -> Case:
    return name, module, list(inputs), _params(module)


def op_cases(rng: np.random.Generator) -> List[Case]:
    """Elementwise, reduction, shape and kernel operations."""
    x = lambda *shape: rng.standard_normal(shape)
    pos = lambda *shape: rng.uniform(0.5, 2.0, shape)
    w3 = x(3, 2, 3, 3)
    projection = orthogonal_features(6, 4, rng)
    labels = rng.integers(0, 3, size=(2, 3, 3))
    mask = np.where(rng.uniform(size=(1, 1, 5, 5)) < 0.3, -1e9, 0.0)
    np.fill_diagonal(mask[0, 0], 0.0)
    return [
        ("add_broadcast", lambda a, b: a + b, [x(2, 3), x(3)], {}),
        ("mul_broadcast", lambda a, b: a * b, [x(2, 3), x(2, 1)], {}),
        ("div", lambda a, b: a / b, [x(2, 3), pos(2, 3)], {}),
        ("pow", lambda a: a ** 3.0, [x(2, 3)], {}),
        ("exp", lambda a: a.exp(), [x(2, 3)], {}),
        ("log", lambda a: a.log(), [pos(2, 3)], {}),
        ("sqrt", lambda a: a.sqrt(), [pos(2, 3)], {}),
        ("sum_axis", lambda a: a.sum(axis=1, keepdims=True), [x(2, 3, 2)], {}),
        ("mean_axes", lambda a: a.mean(axis=(0, 2)), [x(2, 3, 2)], {}),
        ("reshape_transpose", lambda a: a.reshape(3, 4).transpose(1, 0), [x(2, 6)], {}),
        ("getitem_strided", lambda a: a[:, 1::2, ::-1], [x(2, 5, 3)], {}),
        ("matmul_batched", F.matmul, [x(2, 3, 4), x(2, 4, 2)], {}),
        ("linear", F.linear, [x(2, 3, 4), x(5, 4), x(5)], {}),
        ("gelu", F.gelu, [x(3, 4)], {}),
        ("sigmoid", F.sigmoid, [x(3, 4)], {}),
        ("softmax", lambda a: F.softmax(a, axis=1), [x(2, 4, 3)], {}),
        ("conv2d_same", lambda a, w, b: F.conv2d(a, w, b), [x(1, 2, 5, 5), w3, x(3)], {}),
        ("conv2d_stride2", lambda a, w: F.conv2d(a, w, stride=2), [x(1, 2, 6, 6), x(3, 2, 3, 3)], {}),
        ("conv2d_dilated", lambda a, w: F.conv2d(a, w, dilation=2), [x(1, 2, 6, 6), x(2, 2, 3, 3)], {}),
        ("conv2d_valid", lambda a, w: F.conv2d(a, w, padding="valid"), [x(1, 2, 5, 5), x(2, 2, 3, 3)], {}),
        ("conv_transpose2d", F.conv_transpose2d, [x(1, 3, 3, 3), x(3, 2, 2, 2), x(2)], {}),
        ("max_pool2d", F.max_pool2d, [x(1, 2, 4, 4)], {}),
        ("global_avg_pool", F.global_avg_pool, [x(2, 3, 3, 3)], {}),
        ("resize_bilinear", lambda a: F.resize_bilinear(a, (5, 7)), [x(1, 2, 3, 4)], {}),
        ("bilinear_upsample", lambda a: F.bilinear_upsample(a, 2), [x(1, 2, 3, 3)], {}),
        ("batch_norm", lambda a, g, b: F.normalize(a, "batch", g, b), [x(3, 2, 2, 2), pos(2), x(2)], {}),
        ("instance_norm", lambda a, g, b: F.normalize(a, "instance", g, b), [x(2, 2, 3, 3), pos(2), x(2)], {}),
        ("layer_norm", lambda a, g, b: F.normalize(a, "layer", g, b), [x(2, 3, 5), pos(5), x(5)], {}),
        ("concat", lambda a, b: F.concat([a, b], axis=1), [x(1, 2, 3), x(1, 3, 3)], {}),
        ("pad2d", lambda a: F.pad2d(a, (1, 0, 2, 1)), [x(1, 2, 3, 3)], {}),
        ("roll", lambda a: F.roll(a, (-1, 2), axis=(1, 2)), [x(1, 4, 4, 2)], {}),
        ("attention_exact", attention_exact, [x(1, 2, 5, 4), x(1, 2, 5, 4), x(1, 2, 5, 4)], {}),
        ("attention_exact_masked", lambda q, k, v: attention_exact(q, k, v, mask),
         [x(1, 1, 5, 4), x(1, 1, 5, 4), x(1, 1, 5, 4)], {}),
        ("attention_performer", lambda q, k, v: attention_performer(q, k, v, projection=projection),
         [x(1, 1, 5, 4) * 0.5, x(1, 1, 5, 4) * 0.5, x(1, 1, 5, 4)], {}),
        ("window_attention_shifted",
         lambda a: window_attention(a, AttentionConfig(4, 2, "window", window=2, shift=1)),
         [x(1, 4, 4, 4)], {}),
        ("dice_ce_loss",
         lambda logits: dice_ce_loss(F.softmax(logits, axis=1), labels, (1.0, 1.0)),
         [x(2, 3, 3, 3)], {}),
    ]


def block_cases(rng: np.random.Generator) -> List[Case]:
    """Layers and network blocks, parameters included."""
    x = lambda *shape: rng.standard_normal(shape)
    performer = VisionPerformer(1, 2, 8, 4, random_features=8, seed=3, rng=rng).eval()
    return [
        _module_case("Linear", Linear(4, 3, rng), x(2, 4)),
        _module_case("Conv2d", Conv2d(2, 3, 3, rng), x(1, 2, 4, 4)),
        _module_case("ConvTranspose2d", ConvTranspose2d(2, 2, 2, rng), x(1, 2, 2, 2)),
        _module_case("BatchNorm2d", BatchNorm2d(2), x(3, 2, 2, 2)),
        _module_case("LayerNorm", LayerNorm(4), x(2, 3, 4)),
        _module_case("ResidualBlock", residual_block(2, 3, rng), x(2, 2, 4, 4)),
        _module_case("DoubleConv", residual_block(1, 2, rng, residual=False), x(2, 1, 4, 4)),
        _module_case("ASPP", ASPP(2, 2, rng), x(1, 2, 5, 5)),
        _module_case("SEBlock", SEBlock(4, 2, rng), x(2, 4, 3, 3)),
        _module_case("PatchEmbed", PatchEmbed(1, 2, 4, 4, rng), x(1, 1, 4, 4)),
        _module_case("TransformerBlock", TransformerBlock(AttentionConfig(8, 2), rng), x(1, 4, 8)),
        _module_case("SwinBlock", SwinBlock(AttentionConfig(4, 1, "window", window=2, shift=1), rng), x(1, 4, 4, 4)),
        _module_case("PatchMerging", PatchMerging(2, rng), x(1, 4, 4, 2)),
        _module_case("VisionPerformer", performer, x(1, 1, 4, 4)),
    ]


def run_suite(
    seed: int = 0,
    tolerance: float = TOLERANCE,
    names: Optional[List[str]] = None,
    logger: Optional[Logger] = None,
    progress: Optional[ProgressTracker] = None,
) -> List[GradCheckReport]:
    """Check every case; ``names`` restricts the run to the listed cases."""
    logger = logger or Logger()
    progress = progress or ProgressTracker()
    start = time.time()
    with precision("float64"):
        rng = np.random.default_rng(seed)
        cases = op_cases(rng) + block_cases(rng)
    if names:
        cases = [case for case in cases if case[0] in names]

    task = progress.start_task("gradcheck", len(cases))
    reports = []
    for i, (name, fn, inputs, params) in enumerate(cases):
        report = grad_check(fn, inputs, params, tolerance=tolerance, seed=seed + i, name=name)
        (logger.debug if report.passed else logger.error)(str(report))
        reports.append(report)
        progress.advance(task)
    progress.complete_task(task)

    summary = summarize(reports)
    logger.info(
        f"Gradient suite: {summary['checks']} checks, {len(summary['failed'])} failed, "
        f"worst {summary['worst']} ({summary['worst_rel_err']:.2e}) in {time.time() - start:.1f}s"
    )
    return reports
