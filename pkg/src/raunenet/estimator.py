"""scikit-learn compatible wrapper around the network and its training loop."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import LossWeights, NetworkConfig, SsimParams, TrainConfig
from .data import TensorPairs
from .losses import CompositeLoss, FeatureExtractorSpec, build_extractor
from .metrics import psnr
from .model import build_network, enhance_any_size
from .training import load_checkpoint, train
from .validation import ShapeError, check_divisible, check_image_array, to_nchw, to_nhwc


class RauneNetEnhancer(TransformerMixin, BaseEstimator):
    """Underwater image enhancer with the fit/transform API.

    Parameters
    ----------
    base_channels, num_down_blocks, num_residual_blocks, norm_kind
        Architecture options, see :class:`raunenet.config.NetworkConfig`.
    lr, beta1, beta2 : float
        Adam settings.
    epochs, batch_size : int
        Training schedule. ``max_iter`` caps the number of updates.
    lambda_pcont, lambda_ssim, lambda_scont : float
        Loss weights.
    backbone : FeatureExtractorSpec, nn.Module or None
        Feature extractor for the semantic loss. ``None`` looks up the
        VGG19_BN weights through ``$RAUNE_WEIGHTS_DIR`` when
        ``lambda_scont > 0``.
    ssim_window : int
        SSIM window size; must not exceed the image size.
    random_state : int
        Seeds initialization, shuffling and dropout.

    Attributes
    ----------
    net_ : RauneNet
        The trained network.
    history_ : list of dict
        Per-iteration loss breakdown.
    n_iter_ : int
        Number of optimizer steps taken.

    Images are ``(n, height, width, 3)`` arrays, uint8 or float in [0, 1].
    """

    def __init__(
        self,
        base_channels=64,
        num_down_blocks=3,
        num_residual_blocks=8,
        norm_kind="instance",
        lr=1e-4,
        beta1=0.9,
        beta2=0.999,
        epochs=100,
        batch_size=8,
        max_iter=None,
        lambda_pcont=1.0,
        lambda_ssim=1.0,
        lambda_scont=1.0,
        backbone=None,
        ssim_window=11,
        random_state=0,
    ):
        self.base_channels = base_channels
        self.num_down_blocks = num_down_blocks
        self.num_residual_blocks = num_residual_blocks
        self.norm_kind = norm_kind
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.lambda_pcont = lambda_pcont
        self.lambda_ssim = lambda_ssim
        self.lambda_scont = lambda_scont
        self.backbone = backbone
        self.ssim_window = ssim_window
        self.random_state = random_state

    def _network_config(self):
        return NetworkConfig(
            base_channels=self.base_channels,
            num_down_blocks=self.num_down_blocks,
            num_residual_blocks=self.num_residual_blocks,
            norm_kind=self.norm_kind,
        )

    def _criterion(self):
        weights = LossWeights(self.lambda_pcont, self.lambda_ssim, self.lambda_scont)
        extractor = None
        if weights.scont > 0:
            backbone = self.backbone
            if backbone is None:
                backbone = FeatureExtractorSpec()
            if isinstance(backbone, str):
                backbone = FeatureExtractorSpec(weights_path=backbone)
            extractor = build_extractor(backbone) if isinstance(backbone, FeatureExtractorSpec) else backbone
        return CompositeLoss(weights, SsimParams(window_size=self.ssim_window), extractor)

    def fit(self, X, y):
        """Train on paired degraded images ``X`` and references ``y``."""
        X = check_image_array(X, "X")
        y = check_image_array(y, "y")
        if X.shape != y.shape:
            raise ShapeError(f"X and y shapes differ: {X.shape} vs {y.shape}")
        config = self._network_config()
        check_divisible(X.shape[1], X.shape[2], config.divisor)
        cfg = TrainConfig(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.random_state,
            loss_weights=LossWeights(self.lambda_pcont, self.lambda_ssim, self.lambda_scont),
        )
        data = TensorPairs(to_nchw(X) * 2 - 1, to_nchw(y) * 2 - 1)
        net = build_network(config, seed=self.random_state)
        result = train(cfg, data, net, self._criterion(), max_iterations=self.max_iter)
        self.net_ = net
        self.history_ = result.history
        self.n_iter_ = result.iteration
        return self

    def transform(self, X, batch_size=None):
        """Return enhanced images as float32 ``(n, height, width, 3)`` in [0, 1].

        Sizes that are not multiples of the network's divisor are padded
        and cropped back, so output size always equals input size.
        """
        check_is_fitted(self, "net_")
        X = check_image_array(X, "X")
        batch_size = batch_size or self.batch_size
        out = []
        for start in range(0, len(X), batch_size):
            chunk = to_nchw(X[start : start + batch_size]) * 2 - 1
            enhanced = enhance_any_size(self.net_, chunk)
            out.append(to_nhwc((enhanced * 0.5 + 0.5).clamp(0, 1)))
        return np.concatenate(out).astype(np.float32)

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Mean PSNR (dB) of the enhanced ``X`` against ``y``."""
        pred = self.transform(X)
        ref = check_image_array(y, "y")
        values = [
            psnr(torch.from_numpy(p).double(), torch.from_numpy(r).double())
            for p, r in zip(pred, ref)
        ]
        return float(np.mean(values))

    @classmethod
    def from_checkpoint(cls, path):
        net, _, meta = load_checkpoint(path)
        params = {}
        if meta.network_config:
            params = {
                k: meta.network_config[k]
                for k in ("base_channels", "num_down_blocks", "num_residual_blocks", "norm_kind")
            }
        est = cls(**params)
        est.net_ = net
        est.history_ = []
        est.n_iter_ = meta.iteration
        return est
