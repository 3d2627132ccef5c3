"""Training objective: pixel L1, SSIM and backbone feature (semantic) losses."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError, LossWeights, SsimParams
from .validation import NORM11, RAW01, ImageBatch, RangeError, ShapeError, check_same_shape

BACKBONE_FILENAME = "vgg19_bn-c79401a0.pth"
WEIGHTS_DIR_ENV = "RAUNE_WEIGHTS_DIR"
# ImageNet statistics expected by the torchvision VGG19_BN weights.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
NUM_TAPS = 5


class BackboneWeightsError(RuntimeError):
    pass


def _tensors(a, b) -> tuple[torch.Tensor, torch.Tensor, str | None]:
    tag = None
    if isinstance(a, ImageBatch) or isinstance(b, ImageBatch):
        if not (isinstance(a, ImageBatch) and isinstance(b, ImageBatch)):
            raise TypeError("both arguments must be ImageBatch or both tensors")
        if a.range_tag != b.range_tag:
            raise RangeError(f"range tags differ: {a.range_tag} vs {b.range_tag}")
        tag = a.range_tag
        a, b = a.data, b.data
    check_same_shape(a, b)
    return a, b, tag


def to_unit_range(x: torch.Tensor) -> torch.Tensor:
    """Map a normalized [-1, 1] tensor to [0, 1], differentiably."""
    return (x * 0.5 + 0.5).clamp(0.0, 1.0)


def pixel_content_loss(y_e, y_ref) -> torch.Tensor:
    """Mean absolute difference over every element."""
    a, b, _ = _tensors(y_e, y_ref)
    return (a - b).abs().mean()


# --------------------------------------------------------------------- SSIM


def _window_1d(params: SsimParams, dtype, device) -> torch.Tensor:
    size = params.window_size
    if params.window == "uniform":
        w = torch.ones(size, dtype=torch.float64)
    else:
        coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
        w = torch.exp(-(coords**2) / (2.0 * params.sigma**2))
    return (w / w.sum()).to(dtype=dtype, device=device)


def _filter(x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    k = w.numel()
    x = F.conv2d(x, w.view(1, 1, k, 1).expand(c, 1, k, 1), groups=c)
    return F.conv2d(x, w.view(1, 1, 1, k).expand(c, 1, 1, k), groups=c)


def ssim_index_map(x, y, params: SsimParams | None = None) -> torch.Tensor:
    """Per-pixel structural similarity, computed per channel.

    Local means, variances and covariance come from a separable window
    with no padding, so the map is ``window_size - 1`` pixels smaller
    than the inputs along each axis.
    """
    params = params or SsimParams()
    x, y, _ = _tensors(x, y)
    if x.dim() != 4:
        raise ShapeError(f"expected (N, C, H, W) inputs, got {tuple(x.shape)}")
    if params.window_size > x.shape[-1] or params.window_size > x.shape[-2]:
        raise ShapeError(
            f"SSIM window {params.window_size} exceeds image size {tuple(x.shape[-2:])}"
        )
    c1, c2 = params.stabilizers
    w = _window_1d(params, x.dtype, x.device)
    mu_x = _filter(x, w)
    mu_y = _filter(y, w)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = _filter(x * x, w) - mu_xx
    var_y = _filter(y * y, w) - mu_yy
    cov = _filter(x * y, w) - mu_xy
    num = (2 * mu_xy + c1) * (2 * cov + c2)
    den = (mu_xx + mu_yy + c1) * (var_x + var_y + c2)
    return num / den


def ssim(x, y, params: SsimParams | None = None) -> torch.Tensor:
    return ssim_index_map(x, y, params).mean()


def ssim_loss(y_e, y_ref, params: SsimParams | None = None) -> torch.Tensor:
    return (1.0 - ssim(y_e, y_ref, params)) / 2.0


# ----------------------------------------------------------- semantic loss


def _vgg19_bn_features() -> nn.Sequential:
    from torchvision.models import vgg19_bn

    return vgg19_bn(weights=None).features


def backbone_manifest() -> dict[str, tuple[int, ...]]:
    """Names and shapes of the VGG19_BN feature layers, as published by torchvision."""
    return {k: tuple(v.shape) for k, v in _vgg19_bn_features().state_dict().items()}


def _conv_indices(features: nn.Sequential) -> list[int]:
    return [i for i, layer in enumerate(features) if isinstance(layer, nn.Conv2d)]


def load_backbone_state(path) -> dict[str, torch.Tensor]:
    """Read and validate a VGG19_BN weights file.

    Accepts the torchvision checkpoint layout (``features.N.*`` keys plus
    classifier entries, which are ignored) or a bare features state dict.
    """
    path = Path(path)
    if not path.is_file():
        raise BackboneWeightsError(f"backbone weights not found: {path}")
    try:
        raw = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise BackboneWeightsError(f"cannot read backbone weights {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise BackboneWeightsError(f"{path} does not contain a state dict")
    if any(k.startswith("features.") for k in raw):
        raw = {k[len("features.") :]: v for k, v in raw.items() if k.startswith("features.")}
    manifest = backbone_manifest()
    missing = sorted(set(manifest) - set(raw))
    unexpected = sorted(set(raw) - set(manifest))
    if missing or unexpected:
        raise BackboneWeightsError(
            f"{path}: entries do not match the VGG19_BN manifest "
            f"(missing {missing[:3]}, unexpected {unexpected[:3]})"
        )
    for name, shape in manifest.items():
        if tuple(raw[name].shape) != shape:
            raise BackboneWeightsError(
                f"{path}: {name} has shape {tuple(raw[name].shape)}, expected {shape}"
            )
    return raw


def save_backbone_state(module: nn.Module, path) -> None:
    """Write feature-layer weights in the torchvision key layout."""
    state = {f"features.{k}": v for k, v in module.state_dict().items()}
    torch.save(state, path)


class VGGFeatures(nn.Module):
    """Frozen VGG19_BN returning the outputs of its last five convolutions.

    Inputs are [0, 1] RGB; ImageNet normalization is applied internally.
    Each tap is taken directly after its convolution, before batch norm.
    """

    def __init__(self, state_dict=None):
        super().__init__()
        features = _vgg19_bn_features()
        if state_dict is not None:
            features.load_state_dict(state_dict)
        convs = _conv_indices(features)
        self.taps = convs[-NUM_TAPS:]
        self.features = features[: self.taps[-1] + 1]
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # Batch-norm statistics stay frozen.
        return super().train(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        outputs = []
        for i, layer in enumerate(self.features):
            h = layer(h)
            if i in self.taps:
                outputs.append(h)
        return outputs


@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Where the backbone weights live and how the five taps are weighted.

    With ``weights_path`` unset, the file ``vgg19_bn-c79401a0.pth`` is
    looked up in ``$RAUNE_WEIGHTS_DIR``.
    """

    weights_path: str | None = None
    tap_weights: tuple[float, ...] = (1.0,) * NUM_TAPS

    def __post_init__(self):
        if len(self.tap_weights) != NUM_TAPS:
            raise ConfigError(
                "tap_weights", f"expected {NUM_TAPS} weights, got {len(self.tap_weights)}"
            )
        if any(not (w >= 0 and w < float("inf")) for w in self.tap_weights):
            raise ConfigError("tap_weights", "weights must be finite and nonnegative")

    def resolve_path(self) -> Path:
        if self.weights_path:
            return Path(self.weights_path)
        root = os.environ.get(WEIGHTS_DIR_ENV)
        if not root:
            raise BackboneWeightsError(
                f"no backbone weights path given and ${WEIGHTS_DIR_ENV} is not set"
            )
        return Path(root) / BACKBONE_FILENAME


def build_extractor(spec: FeatureExtractorSpec) -> VGGFeatures:
    return VGGFeatures(load_backbone_state(spec.resolve_path()))


Extractor = Callable[[torch.Tensor], Sequence[torch.Tensor]]


def semantic_content_loss(
    y_e, y_ref, extractor: Extractor, tap_weights: Sequence[float] = (1.0,) * NUM_TAPS
) -> torch.Tensor:
    """Weighted sum of L1 distances between paired backbone feature maps.

    ``y_e`` and ``y_ref`` are [0, 1] images. The reference branch is
    evaluated without gradient tracking.
    """
    a, b, tag = _tensors(y_e, y_ref)
    if tag == NORM11:
        a, b = to_unit_range(a), to_unit_range(b)
    if len(tap_weights) != NUM_TAPS:
        raise ConfigError("tap_weights", f"expected {NUM_TAPS} weights, got {len(tap_weights)}")
    if all(k == 0 for k in tap_weights):
        return a.new_zeros(())
    feats_e = extractor(a)
    with torch.no_grad():
        feats_ref = extractor(b)
    if len(feats_e) != NUM_TAPS or len(feats_ref) != NUM_TAPS:
        raise ConfigError("extractor", f"extractor must return {NUM_TAPS} feature maps")
    total = a.new_zeros(())
    for k, fe, fr in zip(tap_weights, feats_e, feats_ref):
        if k:
            total = total + k * (fe - fr).abs().mean()
    return total


# ----------------------------------------------------------------- combined


def combine(components: dict, weights: LossWeights):
    return (
        weights.pcont * components["pcont"]
        + weights.ssim * components["ssim"]
        + weights.scont * components["scont"]
    )


def total_loss(
    y_e,
    y_ref,
    weights: LossWeights | None = None,
    ssim_params: SsimParams | None = None,
    extractor: Extractor | None = None,
    tap_weights: Sequence[float] = (1.0,) * NUM_TAPS,
):
    """Weighted sum of the three losses.

    Inputs are normalized [-1, 1] images (or tagged ImageBatch values);
    every component is evaluated after mapping both to [0, 1]. Returns
    ``(total, breakdown)`` where ``breakdown`` maps ``pcont``, ``ssim``,
    ``scont`` and ``total`` to detached floats. The semantic term is
    skipped (reported as 0) when its weight is zero.
    """
    weights = weights or LossWeights()
    a, b, tag = _tensors(y_e, y_ref)
    if tag != RAW01:
        a, b = to_unit_range(a), to_unit_range(b)
    components = {
        "pcont": pixel_content_loss(a, b),
        "ssim": ssim_loss(a, b, ssim_params),
    }
    if weights.scont > 0:
        if extractor is None:
            raise ConfigError("extractor", "semantic loss weight is nonzero but no extractor")
        components["scont"] = semantic_content_loss(a, b, extractor, tap_weights)
    else:
        components["scont"] = a.new_zeros(())
    total = combine(components, weights)
    breakdown = {k: float(v.detach()) for k, v in components.items()}
    breakdown["total"] = float(total.detach())
    return total, breakdown


class CompositeLoss(nn.Module):
    """Callable training objective bundling weights, SSIM constants and extractor."""

    def __init__(
        self,
        weights: LossWeights | None = None,
        ssim_params: SsimParams | None = None,
        extractor: nn.Module | None = None,
        tap_weights=(1.0,) * NUM_TAPS,
    ):
        super().__init__()
        self.weights = weights or LossWeights()
        self.ssim_params = ssim_params or SsimParams()
        self.extractor = extractor
        self.tap_weights = tuple(tap_weights)

    def forward(self, y_e, y_ref):
        return total_loss(
            y_e, y_ref, self.weights, self.ssim_params, self.extractor, self.tap_weights
        )
