"""Sequential channel and spatial attention applied at the end of each down block."""

import torch
import torch.nn as nn
import torch.nn.functional as F


def pad2d(x: torch.Tensor, pad: int) -> torch.Tensor:
    """Reflection padding, falling back to replicate when the map is too small."""
    if pad == 0:
        return x
    if pad < x.shape[-1] and pad < x.shape[-2]:
        return F.pad(x, (pad, pad, pad, pad), mode="reflect")
    return F.pad(x, (pad, pad, pad, pad), mode="replicate")


class ChannelAttention(nn.Module):
    """Per-channel gate from average- and max-pooled descriptors.

    Both descriptors go through one shared bottleneck ``C -> C/r -> C``;
    their outputs are summed and squashed by a sigmoid.
    """

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Conv2d(channels, hidden, 1, bias=False)
        self.fc2 = nn.Conv2d(hidden, channels, 1, bias=False)

    def mlp(self, x):
        return self.fc2(F.relu(self.fc1(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        avg = x.mean(dim=(2, 3), keepdim=True)
        mx = x.amax(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.mlp(avg) + self.mlp(mx))


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("spatial attention kernel size must be odd")
        self.pad = (kernel_size - 1) // 2
        self.conv = nn.Conv2d(2, 1, kernel_size, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        desc = torch.cat(
            [x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1
        )
        return torch.sigmoid(self.conv(pad2d(desc, self.pad)))


class CBAM(nn.Module):
    """Channel attention followed by spatial attention.

    ``out = s(f') * f'`` with ``f' = c(f) * f``. Both gates lie in (0, 1),
    so the block never increases the magnitude of any element.
    """

    def __init__(self, channels: int, reduction: int = 16, kernel_size: int = 7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(kernel_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x * self.channel(x)
        return x * self.spatial(x)


def channel_attention(module: ChannelAttention, fmap: torch.Tensor) -> torch.Tensor:
    return module(fmap)


def spatial_attention(module: SpatialAttention, fmap: torch.Tensor) -> torch.Tensor:
    return module(fmap)


def cbam_apply(
    channel: ChannelAttention, spatial: SpatialAttention, fmap: torch.Tensor
) -> torch.Tensor:
    refined = channel(fmap) * fmap
    return spatial(refined) * refined
