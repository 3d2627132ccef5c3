"""Configuration records for the network, losses, preprocessing and training."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

NORM_KINDS = ("instance", "batch", "none")
ACTIVATIONS = ("relu", "leaky_relu")


class ConfigError(ValueError):
    """Raised when a configuration value is invalid.

    The offending field name is available as ``field``.
    """

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ConfigError(field_name, message)


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    Stage widths start at ``base_channels`` and are multiplied by
    ``channel_growth`` per down-sampling block, capped at
    ``max_channel_mult * base_channels``. The decoder mirrors the encoder.
    """

    base_channels: int = 64
    num_down_blocks: int = 3
    num_residual_blocks: int = 8
    norm_kind: str = "instance"
    dropout_down: bool = False
    dropout_residual: bool = False
    dropout_up: bool = False
    dropout_p: float = 0.5
    channel_growth: int = 2
    max_channel_mult: int = 8
    attention_reduction: int = 16
    spatial_attention_kernel: int = 7
    leaky_slope: float = 0.2
    up_activation: str = "relu"
    smoothing_norm: bool = False
    init_std: float = 0.02

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        _require(self.base_channels >= 1, "base_channels", "must be a positive integer")
        _require(self.num_down_blocks >= 1, "num_down_blocks", "must be a positive integer")
        _require(
            self.num_residual_blocks >= 1, "num_residual_blocks", "must be a positive integer"
        )
        _require(self.norm_kind in NORM_KINDS, "norm_kind", f"must be one of {NORM_KINDS}")
        _require(0.0 <= self.dropout_p < 1.0, "dropout_p", "must lie in [0, 1)")
        _require(self.channel_growth >= 1, "channel_growth", "must be a positive integer")
        _require(self.max_channel_mult >= 1, "max_channel_mult", "must be a positive integer")
        _require(
            self.attention_reduction >= 1, "attention_reduction", "must be a positive integer"
        )
        _require(
            self.spatial_attention_kernel >= 1 and self.spatial_attention_kernel % 2 == 1,
            "spatial_attention_kernel",
            "must be a positive odd integer",
        )
        _require(self.leaky_slope >= 0.0, "leaky_slope", "must be nonnegative")
        _require(
            self.up_activation in ACTIVATIONS, "up_activation", f"must be one of {ACTIVATIONS}"
        )
        _require(self.init_std > 0.0, "init_std", "must be positive")

    @property
    def divisor(self) -> int:
        """Input height and width must be multiples of this value."""
        return 2**self.num_down_blocks

    def stage_widths(self) -> tuple[int, ...]:
        cap = self.base_channels * self.max_channel_mult
        widths = [self.base_channels]
        for _ in range(self.num_down_blocks):
            widths.append(min(widths[-1] * self.channel_growth, cap))
        return tuple(widths)


@dataclass(frozen=True)
class LossWeights:
    pcont: float = 1.0
    ssim: float = 1.0
    scont: float = 1.0

    def __post_init__(self):
        for name in ("pcont", "ssim", "scont"):
            value = getattr(self, name)
            _require(
                math.isfinite(value) and value >= 0.0,
                f"lambda_{name}",
                "must be a finite nonnegative number",
            )


@dataclass(frozen=True)
class SsimParams:
    """Constants for the structural similarity index.

    ``c1`` and ``c2`` default to ``(0.01 L)^2`` and ``(0.03 L)^2``.
    """

    window: str = "gaussian"
    window_size: int = 11
    sigma: float = 1.5
    value_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    c1: float | None = None
    c2: float | None = None

    def __post_init__(self):
        _require(self.window in ("gaussian", "uniform"), "window", "gaussian or uniform")
        _require(
            self.window_size >= 1 and self.window_size % 2 == 1,
            "window_size",
            "must be a positive odd integer",
        )
        _require(self.sigma > 0, "sigma", "must be positive")
        _require(self.value_range > 0, "value_range", "must be positive")
        _require(self.stabilizers[0] > 0, "c1", "must be positive")
        _require(self.stabilizers[1] > 0, "c2", "must be positive")

    @property
    def stabilizers(self) -> tuple[float, float]:
        c1 = self.c1 if self.c1 is not None else (self.k1 * self.value_range) ** 2
        c2 = self.c2 if self.c2 is not None else (self.k2 * self.value_range) ** 2
        return c1, c2


@dataclass(frozen=True)
class PreprocessSpec:
    size: tuple[int, int] = (256, 256)
    mean: float = 0.5
    std: float = 0.5

    def __post_init__(self):
        _require(
            len(self.size) == 2 and all(int(s) >= 1 for s in self.size),
            "image_size",
            "must be two positive integers",
        )
        _require(self.std > 0, "std", "must be positive")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 100
    batch_size: int = 8
    checkpoint_every: int = 5
    preview_every: int = 500
    seed: int = 0
    deterministic: bool = True
    shuffle: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        _require(self.lr >= 0.0 and math.isfinite(self.lr), "lr", "must be nonnegative")
        _require(0.0 <= self.beta1 < 1.0, "beta1", "must lie in [0, 1)")
        _require(0.0 <= self.beta2 < 1.0, "beta2", "must lie in [0, 1)")
        _require(self.epochs >= 1, "epochs", "must be a positive integer")
        _require(self.batch_size >= 1, "batch_size", "must be a positive integer")
        _require(self.checkpoint_every >= 1, "checkpoint_every", "must be a positive integer")
        _require(self.preview_every >= 1, "preview_every", "must be a positive integer")


def to_dict(cfg: Any) -> dict:
    return dataclasses.asdict(cfg)


def network_config_from_dict(data: Mapping[str, Any]) -> NetworkConfig:
    known = {f.name for f in dataclasses.fields(NetworkConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown network option")
    return NetworkConfig(**dict(data))


def train_config_from_dict(data: Mapping[str, Any]) -> TrainConfig:
    data = dict(data)
    weights = data.pop("loss_weights", {}) or {}
    if not isinstance(weights, LossWeights):
        weights = LossWeights(**weights)
    return TrainConfig(loss_weights=weights, **data)
