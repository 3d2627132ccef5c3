"""Input validation helpers shared by the network, losses and estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

RAW01 = "raw01"
NORM11 = "norm11"
RANGE_TAGS = (RAW01, NORM11)

_BOUNDS = {RAW01: (0.0, 1.0), NORM11: (-1.0, 1.0)}
_RANGE_TOL = 1e-6


class ShapeError(ValueError):
    pass


class DimensionError(ShapeError):
    """Spatial size incompatible with the network's down-sampling depth."""


class RangeError(ValueError):
    pass


@dataclass(frozen=True)
class ImageBatch:
    """A ``(N, C, H, W)`` tensor tagged with its value range.

    ``raw01`` values live in [0, 1], ``norm11`` values in [-1, 1].
    """

    data: torch.Tensor
    range_tag: str

    def __post_init__(self):
        if self.range_tag not in RANGE_TAGS:
            raise ValueError(f"unknown range tag {self.range_tag!r}")
        check_rank4(self.data)
        check_range(self.data, self.range_tag)

    @property
    def shape(self):
        return tuple(self.data.shape)


def check_rank4(x: torch.Tensor, channels: int | None = None) -> None:
    if x.dim() != 4:
        raise ShapeError(f"expected a rank-4 (N, C, H, W) tensor, got shape {tuple(x.shape)}")
    n, c, h, w = x.shape
    if n < 1 or h < 1 or w < 1:
        raise ShapeError(f"empty batch or spatial size in shape {tuple(x.shape)}")
    if channels is not None and c != channels:
        raise ShapeError(f"expected {channels} channels, got {c}")


def check_range(x: torch.Tensor, range_tag: str) -> None:
    lo, hi = _BOUNDS[range_tag]
    if x.numel() == 0:
        return
    xmin, xmax = float(x.min()), float(x.max())
    if not (np.isfinite(xmin) and np.isfinite(xmax)):
        raise RangeError("image contains non-finite values")
    if xmin < lo - _RANGE_TOL or xmax > hi + _RANGE_TOL:
        raise RangeError(
            f"values [{xmin:.4g}, {xmax:.4g}] fall outside the {range_tag} range [{lo}, {hi}]"
        )


def check_divisible(height: int, width: int, divisor: int) -> None:
    if height % divisor or width % divisor:
        raise DimensionError(
            f"height and width must be divisible by {divisor}, got {height}x{width}"
        )


def check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def unwrap(x, expected_tag: str | None = None) -> torch.Tensor:
    """Return the tensor behind ``x``, checking its tag if it is an ImageBatch."""
    if isinstance(x, ImageBatch):
        if expected_tag is not None and x.range_tag != expected_tag:
            raise RangeError(f"expected a {expected_tag} batch, got {x.range_tag}")
        return x.data
    if not isinstance(x, torch.Tensor):
        raise TypeError(f"expected a tensor or ImageBatch, got {type(x).__name__}")
    return x


def check_image_array(X, name: str = "X") -> np.ndarray:
    """Validate an array of RGB images for the estimator API.

    Accepts ``(N, H, W, 3)`` arrays, either uint8 or floating point in
    [0, 1], and a single ``(H, W, 3)`` image. Returns float32 in [0, 1].
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ShapeError(f"{name} must have shape (n_images, height, width, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ShapeError(f"{name} contains no images")
    if X.dtype == np.uint8:
        return X.astype(np.float32) / 255.0
    if not np.issubdtype(X.dtype, np.floating):
        raise TypeError(f"{name} must be uint8 or floating point, got {X.dtype}")
    if not np.all(np.isfinite(X)):
        raise RangeError(f"{name} contains non-finite values")
    if X.min() < -_RANGE_TOL or X.max() > 1 + _RANGE_TOL:
        raise RangeError(f"floating point {name} must lie in [0, 1]")
    return np.clip(X, 0.0, 1.0).astype(np.float32)


def to_nchw(X: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(X.transpose(0, 3, 1, 2)))


def to_nhwc(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().permute(0, 2, 3, 1).numpy()
