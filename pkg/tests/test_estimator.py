import numpy as np
import pytest
import torch
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import ConvStubExtractor
from raunenet import RauneNetEnhancer
from raunenet.model import build_network
from raunenet.training import CheckpointMeta, save_checkpoint
from raunenet.validation import RangeError, ShapeError


def images(n=4, size=16, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0.1, 0.9, (n, size, size, 3)).astype(np.float32)
    return (y * 0.7 + 0.05).astype(np.float32), y


def small(**kw):
    params = dict(base_channels=8, num_down_blocks=2, num_residual_blocks=1, epochs=2, batch_size=2,
                  ssim_window=7, backbone=ConvStubExtractor(dtype=torch.float32), lr=1e-3)
    params.update(kw)
    return RauneNetEnhancer(**params)


def test_get_params_and_clone():
    est = small(random_state=3)
    params = est.get_params()
    assert params["base_channels"] == 8 and params["random_state"] == 3
    twin = clone(est)
    assert twin.get_params()["num_down_blocks"] == 2
    est.set_params(lr=0.5)
    assert est.lr == 0.5


def test_fit_transform_shapes_and_range():
    X, y = images()
    est = small().fit(X, y)
    assert est.n_iter_ == 4 and len(est.history_) == 4
    out = est.transform(X)
    assert out.shape == X.shape and out.dtype == np.float32
    assert out.min() >= 0 and out.max() <= 1
    odd = est.transform(np.zeros((1, 13, 10, 3), dtype=np.uint8))
    assert odd.shape == (1, 13, 10, 3)
    assert np.isfinite(est.score(X, y))
    np.testing.assert_array_equal(est.predict(X), out)


def test_fit_is_seeded():
    X, y = images()
    a = small(random_state=1, max_iter=2).fit(X, y)
    b = small(random_state=1, max_iter=2).fit(X, y)
    assert a.history_ == b.history_
    assert a.n_iter_ == 2


def test_input_validation():
    est = small()
    with pytest.raises(NotFittedError):
        est.transform(np.zeros((1, 16, 16, 3)))
    X, y = images()
    with pytest.raises(ShapeError):
        est.fit(X, y[:, :8])
    with pytest.raises(ShapeError, match="divisible"):
        est.fit(X[:, :14, :14], y[:, :14, :14])
    with pytest.raises(RangeError):
        est.fit(X * 3, y)
    with pytest.raises(ShapeError):
        est.fit(X[..., :2], y[..., :2])


def test_from_checkpoint(tmp_path):
    est = small()
    net = build_network(est._network_config(), seed=0)
    from dataclasses import asdict

    path = save_checkpoint(net, {}, CheckpointMeta(3, 30, network_config=asdict(net.config)), tmp_path / "c.ckpt")
    loaded = RauneNetEnhancer.from_checkpoint(path)
    assert loaded.base_channels == 8 and loaded.n_iter_ == 30
    X, _ = images(2)
    assert loaded.transform(X).shape == X.shape
