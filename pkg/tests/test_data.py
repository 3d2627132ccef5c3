import logging

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from conftest import make_paired_dir, write_rgb
from raunenet.config import PreprocessSpec
from raunenet.data import (
    DatasetError,
    ImageReadError,
    denormalize,
    load_paired,
    load_unpaired,
    normalize,
    preprocess,
    read_image,
    save_image,
)
from raunenet.validation import ImageBatch, RangeError


def test_load_paired_sorted_and_matched(tmp_path):
    root = make_paired_dir(tmp_path / "d", n=3)
    ds = load_paired(root)
    assert ds.names == ["img00", "img01", "img02"]
    assert len(ds) == 3


def test_load_paired_extension_insensitive(tmp_path):
    root = make_paired_dir(tmp_path / "d", n=2, suffix=".jpg")
    ds = load_paired(root)
    assert [e[1].suffix for e in ds.entries] == [".jpg", ".jpg"]
    assert [e[2].suffix for e in ds.entries] == [".png", ".png"]


def test_unmatched_input_is_warned_and_excluded(tmp_path, caplog):
    root = make_paired_dir(tmp_path / "d", n=2)
    write_rgb(root / "input" / "x.png", np.zeros((4, 4, 3)))
    (root / "input" / "notes.txt").write_text("hi")
    with caplog.at_level(logging.WARNING):
        ds = load_paired(root)
    assert "x" not in ds.names
    assert any("x.png" in r.message for r in caplog.records)
    assert any("notes.txt" in r.message for r in caplog.records)


def test_empty_target_dir_is_an_error(tmp_path):
    root = tmp_path / "d"
    (root / "input").mkdir(parents=True)
    (root / "target").mkdir()
    write_rgb(root / "input" / "a.png", np.zeros((4, 4, 3)))
    with pytest.raises(DatasetError, match="no matching"):
        load_paired(root)


def test_missing_subdirectory(tmp_path):
    (tmp_path / "d" / "input").mkdir(parents=True)
    with pytest.raises(DatasetError, match="target"):
        load_paired(tmp_path / "d")


def test_discovery_order_is_deterministic(tmp_path):
    root = make_paired_dir(tmp_path / "d", n=5)
    assert load_paired(root).entries == load_paired(root).entries


def test_unpaired_discovery(tmp_path):
    for name in ("b.png", "a.jpg"):
        write_rgb(tmp_path / name, np.zeros((4, 4, 3)))
    ds = load_unpaired(tmp_path, PreprocessSpec(size=(8, 8)))
    assert [p.name for p in ds.entries] == ["a.jpg", "b.png"]
    x, name = ds[0]
    assert x.shape == (3, 8, 8) and name == "a"
    with pytest.raises(DatasetError):
        load_unpaired(tmp_path / "nothing")


@pytest.mark.parametrize("byte, expected", [(255, 1.0), (0, -1.0), (128, 128 / 255 * 2 - 1)])
def test_preprocess_endpoints(tmp_path, byte, expected):
    path = tmp_path / "c.png"
    write_rgb(path, np.full((10, 6, 3), byte))
    x = preprocess(path, PreprocessSpec(size=(4, 4)))
    assert x.shape == (3, 4, 4)
    np.testing.assert_allclose(x.numpy(), expected, atol=1e-6)
    if byte == 128:
        assert float(x[0, 0, 0]) == pytest.approx(0.00392, abs=1e-5)


def test_preprocess_default_size_and_range(tmp_path):
    path = tmp_path / "r.png"
    write_rgb(path, np.random.default_rng(0).integers(0, 256, (37, 50, 3)))
    x = preprocess(path)
    assert x.shape == (3, 256, 256)
    assert float(x.min()) >= -1 and float(x.max()) <= 1


def test_preprocess_bilinear_matches_manual_interpolation(tmp_path):
    path = tmp_path / "g.png"
    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    arr[0, 0], arr[0, 1], arr[1, 0], arr[1, 1] = 0, 100, 200, 50
    write_rgb(path, arr)
    raw = read_image(path)[0]
    x = preprocess(path, PreprocessSpec(size=(4, 4)), True)[0] * 0.5 + 0.5
    # half-pixel centres: output pixel (1, 1) samples input (0.25, 0.25)
    expected = (0.75 * 0.75 * raw[0, 0] + 0.75 * 0.25 * raw[0, 1]
                + 0.25 * 0.75 * raw[1, 0] + 0.25 * 0.25 * raw[1, 1])
    assert float(x[1, 1]) == pytest.approx(float(expected), abs=1e-6)


def test_undecodable_file(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(ImageReadError, match="bad.png"):
        preprocess(bad)


def test_denormalize_values_and_tags():
    x = torch.tensor([-1.0, 0.0, 1.0, 1.5]).view(1, 1, 2, 2)
    np.testing.assert_allclose(denormalize(x).flatten().numpy(), [0.0, 0.5, 1.0, 1.0])
    out = denormalize(ImageBatch(torch.zeros(1, 3, 2, 2), "norm11"))
    assert out.range_tag == "raw01"
    with pytest.raises(RangeError):
        denormalize(ImageBatch(torch.zeros(1, 3, 2, 2), "raw01"))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=12, max_size=12))
def test_roundtrip_within_quantization(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "q.png"
    arr = np.array(values, dtype=np.uint8).reshape(2, 2, 3)
    write_rgb(path, arr)
    x = preprocess(path, PreprocessSpec(size=(2, 2)))
    raw = denormalize(x)
    assert float((raw - normalize(raw) * 0.5 - 0.5).abs().max()) <= 1e-6
    np.testing.assert_allclose(raw.permute(1, 2, 0).numpy(), arr / 255.0, atol=1 / 255)


def test_save_image_rounding(tmp_path):
    path = tmp_path / "half.png"
    save_image(torch.full((3, 4, 4), 0.5), path)
    assert np.all(np.asarray(Image.open(path)) == 128)


def test_save_load_roundtrip(tmp_path):
    img = torch.rand(3, 9, 7, generator=torch.Generator().manual_seed(0))
    save_image(img, tmp_path / "r.png")
    back = read_image(tmp_path / "r.png")
    assert float((back - img).abs().max()) <= 1 / 255


def test_save_image_rejects_out_of_range(tmp_path):
    with pytest.raises(RangeError):
        save_image(torch.full((3, 2, 2), 1.2), tmp_path / "x.png")
    with pytest.raises(ImageReadError):
        save_image(torch.zeros(3, 2, 2), tmp_path / "missing" / "x.png")


def test_paired_dataset_items(tmp_path):
    root = make_paired_dir(tmp_path / "d", n=2, size=(12, 10))
    ds = load_paired(root, PreprocessSpec(size=(8, 8)))
    x, y, name = ds[1]
    assert x.shape == y.shape == (3, 8, 8) and name == "img01"
    native = load_paired(root, resize_to=False)
    assert native[0][0].shape == (3, 12, 10)
