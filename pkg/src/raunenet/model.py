"""The enhancement network: perception stem, attention down-sampling, residual
bottleneck, transposed-convolution up-sampling and a smoothing head."""

from __future__ import annotations

import hashlib
from collections import OrderedDict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import CBAM, pad2d
from .config import NetworkConfig
from .validation import (
    NORM11,
    ImageBatch,
    ShapeError,
    check_divisible,
    check_rank4,
    unwrap,
)

__all__ = [
    "RauneNet",
    "PassthroughNet",
    "build_network",
    "forward",
    "enhance_any_size",
    "shape_manifest",
    "parameter_checksum",
]


def make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=False, track_running_stats=False)
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    return nn.Identity()


def make_activation(kind: str, slope: float) -> nn.Module:
    if kind == "leaky_relu":
        return nn.LeakyReLU(slope)
    return nn.ReLU()


def _dropout(enabled: bool, p: float) -> nn.Module:
    return nn.Dropout(p) if enabled else nn.Identity()


def _check_channels(x: torch.Tensor, expected: int) -> None:
    if x.shape[1] != expected:
        raise ShapeError(f"expected {expected} channels, got {x.shape[1]}")


class WideRangePerception(nn.Module):
    """Reflection pad 3, 7x7 convolution, normalization, ReLU."""

    def __init__(self, in_channels: int, out_channels: int, norm: str = "instance"):
        super().__init__()
        self.in_channels = in_channels
        self.conv = nn.Conv2d(in_channels, out_channels, 7)
        self.norm = make_norm(norm, out_channels)
        self.act = nn.ReLU()

    def forward(self, x):
        _check_channels(x, self.in_channels)
        return self.act(self.norm(self.conv(pad2d(x, 3))))


class AttentionDown(nn.Module):
    """Stride-2 4x4 convolution, norm, LeakyReLU, optional dropout, then CBAM."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        norm: str = "instance",
        slope: float = 0.2,
        dropout: bool = False,
        dropout_p: float = 0.5,
        reduction: int = 16,
        kernel_size: int = 7,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.conv = nn.Conv2d(in_channels, out_channels, 4, stride=2, padding=1)
        self.norm = make_norm(norm, out_channels)
        self.act = nn.LeakyReLU(slope)
        self.dropout = _dropout(dropout, dropout_p)
        self.attention = CBAM(out_channels, reduction, kernel_size)

    def forward(self, x):
        _check_channels(x, self.in_channels)
        check_divisible(x.shape[-2], x.shape[-1], 2)
        return self.attention(self.dropout(self.act(self.norm(self.conv(x)))))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, norm: str = "instance", dropout=False, dropout_p=0.5):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(channels, channels, 3)
        self.norm1 = make_norm(norm, channels)
        self.act = nn.ReLU()
        self.dropout = _dropout(dropout, dropout_p)
        self.conv2 = nn.Conv2d(channels, channels, 3)
        self.norm2 = make_norm(norm, channels)

    def branch(self, x):
        h = self.dropout(self.act(self.norm1(self.conv1(pad2d(x, 1)))))
        return self.norm2(self.conv2(pad2d(h, 1)))

    def forward(self, x):
        _check_channels(x, self.channels)
        return x + self.branch(x)


class UpBlock(nn.Module):
    """4x4 transposed convolution (stride 2, padding 1), norm, activation, dropout."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        norm: str = "instance",
        activation: str = "relu",
        slope: float = 0.2,
        dropout: bool = False,
        dropout_p: float = 0.5,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.conv = nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1)
        self.norm = make_norm(norm, out_channels)
        self.act = make_activation(activation, slope)
        self.dropout = _dropout(dropout, dropout_p)

    def forward(self, x):
        _check_channels(x, self.in_channels)
        return self.dropout(self.act(self.norm(self.conv(x))))


class FeatureSmoothing(nn.Module):
    """Reflection pad 3 and a 7x7 convolution down to RGB, followed by tanh."""

    def __init__(self, in_channels: int, out_channels: int = 3, norm: str | None = None):
        super().__init__()
        self.in_channels = in_channels
        self.conv = nn.Conv2d(in_channels, out_channels, 7)
        self.norm = make_norm(norm, out_channels) if norm else nn.Identity()

    def forward(self, x):
        _check_channels(x, self.in_channels)
        return torch.tanh(self.norm(self.conv(pad2d(x, 3))))


class RauneNet(nn.Module):
    def __init__(self, config: NetworkConfig | None = None):
        super().__init__()
        self.config = config = config or NetworkConfig()
        widths = config.stage_widths()
        norm = config.norm_kind
        self.wrpm = WideRangePerception(3, widths[0], norm)
        self.down = nn.ModuleList(
            AttentionDown(
                widths[i],
                widths[i + 1],
                norm,
                config.leaky_slope,
                config.dropout_down,
                config.dropout_p,
                config.attention_reduction,
                config.spatial_attention_kernel,
            )
            for i in range(config.num_down_blocks)
        )
        self.residual = nn.ModuleList(
            ResidualBlock(widths[-1], norm, config.dropout_residual, config.dropout_p)
            for _ in range(config.num_residual_blocks)
        )
        self.up = nn.ModuleList(
            UpBlock(
                widths[i + 1],
                widths[i],
                norm,
                config.up_activation,
                config.leaky_slope,
                config.dropout_up,
                config.dropout_p,
            )
            for i in reversed(range(config.num_down_blocks))
        )
        self.smooth = FeatureSmoothing(
            widths[0], 3, norm if config.smoothing_norm else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_rank4(x, channels=3)
        check_divisible(x.shape[-2], x.shape[-1], self.config.divisor)
        h = self.wrpm(x)
        for block in self.down:
            h = block(h)
        for block in self.residual:
            h = block(h)
        for block in self.up:
            h = block(h)
        return self.smooth(h)


class PassthroughNet(nn.Module):
    """Identity map; a no-enhancement baseline for evaluation runs."""

    config = None

    def forward(self, x):
        check_rank4(x, channels=3)
        return x.clone()


def init_parameters(net: nn.Module, std: float, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                w = torch.randn(module.weight.shape, generator=gen) * std
                module.weight.copy_(w)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.BatchNorm2d):
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.reset_running_stats()


def build_network(config: NetworkConfig | None = None, seed: int = 0) -> RauneNet:
    """Construct a network with Gaussian(0, init_std) weights and zero biases.

    The same ``(config, seed)`` always yields bit-identical parameters.
    """
    config = config or NetworkConfig()
    config.validate()
    net = RauneNet(config)
    init_parameters(net, config.init_std, seed)
    return net


def forward(net: nn.Module, x, train_mode: bool = False):
    """Run ``net`` on a normalized batch.

    Accepts an ``ImageBatch`` tagged ``norm11`` or a bare tensor, and
    returns the same kind. With ``train_mode=False`` dropout is disabled
    and no gradients are recorded.
    """
    data = unwrap(x, NORM11)
    net.train(train_mode)
    if train_mode:
        out = net(data)
    else:
        with torch.no_grad():
            out = net(data)
    if isinstance(x, ImageBatch):
        return ImageBatch(out, NORM11)
    return out


def padding_to_multiple(size: int, divisor: int) -> tuple[int, int]:
    total = (-size) % divisor
    return total // 2, total - total // 2


def enhance_any_size(net: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Reflect-pad ``x`` to the next valid size, run ``net``, crop back to the centre."""
    divisor = net.config.divisor if getattr(net, "config", None) else 1
    h, w = x.shape[-2:]
    top, bottom = padding_to_multiple(h, divisor)
    left, right = padding_to_multiple(w, divisor)
    if top or bottom or left or right:
        mode = "reflect" if max(top, bottom) < h and max(left, right) < w else "replicate"
        x = F.pad(x, (left, right, top, bottom), mode=mode)
    out = forward(net, x, train_mode=False)
    return out[..., top : top + h, left : left + w]


def shape_manifest(config: NetworkConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Expected state-dict entry shapes, derived from the config alone."""
    widths = config.stage_widths()
    manifest: OrderedDict[str, tuple[int, ...]] = OrderedDict()

    def conv(prefix, cin, cout, k, bias=True):
        manifest[f"{prefix}.weight"] = (cout, cin, k, k)
        if bias:
            manifest[f"{prefix}.bias"] = (cout,)

    def convt(prefix, cin, cout, k):
        manifest[f"{prefix}.weight"] = (cin, cout, k, k)
        manifest[f"{prefix}.bias"] = (cout,)

    def norm(prefix, c, kind=config.norm_kind):
        if kind == "batch":
            for name in ("weight", "bias", "running_mean", "running_var"):
                manifest[f"{prefix}.{name}"] = (c,)
            manifest[f"{prefix}.num_batches_tracked"] = ()

    conv("wrpm.conv", 3, widths[0], 7)
    norm("wrpm.norm", widths[0])
    for i in range(config.num_down_blocks):
        cin, cout = widths[i], widths[i + 1]
        hidden = max(1, cout // config.attention_reduction)
        conv(f"down.{i}.conv", cin, cout, 4)
        norm(f"down.{i}.norm", cout)
        conv(f"down.{i}.attention.channel.fc1", cout, hidden, 1, bias=False)
        conv(f"down.{i}.attention.channel.fc2", hidden, cout, 1, bias=False)
        conv(f"down.{i}.attention.spatial.conv", 2, 1, config.spatial_attention_kernel, bias=False)
    for i in range(config.num_residual_blocks):
        c = widths[-1]
        conv(f"residual.{i}.conv1", c, c, 3)
        norm(f"residual.{i}.norm1", c)
        conv(f"residual.{i}.conv2", c, c, 3)
        norm(f"residual.{i}.norm2", c)
    for j, i in enumerate(reversed(range(config.num_down_blocks))):
        convt(f"up.{j}.conv", widths[i + 1], widths[i], 4)
        norm(f"up.{j}.norm", widths[i])
    conv("smooth.conv", widths[0], 3, 7)
    if config.smoothing_norm:
        norm("smooth.norm", 3)
    return manifest


def parameter_checksum(state_dict) -> str:
    """SHA-256 over every state entry's name, dtype, shape and raw bytes."""
    digest = hashlib.sha256()
    for name, tensor in state_dict.items():
        t = tensor.detach().cpu().contiguous()
        digest.update(name.encode())
        digest.update(str(t.dtype).encode())
        digest.update(str(tuple(t.shape)).encode())
        digest.update(t.numpy().tobytes() if t.numel() else b"")
    return digest.hexdigest()
