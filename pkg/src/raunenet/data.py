"""Paired/unpaired dataset discovery, preprocessing and image I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from torch.utils.data import Dataset

from .config import PreprocessSpec
from .validation import NORM11, RAW01, ImageBatch, RangeError, check_range, unwrap

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
INPUT_DIR = "input"
TARGET_DIR = "target"


class DatasetError(RuntimeError):
    pass


class ImageReadError(OSError):
    pass


def is_image_file(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES


def _index_dir(directory: Path) -> dict[str, Path]:
    """Map filename stems to image paths, warning about skipped or ambiguous files."""
    found: dict[str, list[Path]] = {}
    for path in sorted(directory.iterdir()):
        if not is_image_file(path):
            if path.is_file():
                logger.warning("skipping non-image file %s", path)
            continue
        found.setdefault(path.stem, []).append(path)
    index = {}
    for stem, paths in found.items():
        if len(paths) > 1:
            logger.warning("ambiguous image name %s in %s: %s", stem, directory, paths)
            continue
        index[stem] = paths[0]
    return index


def read_image(path) -> torch.Tensor:
    """Decode an image file into a ``(3, H, W)`` float tensor in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageReadError(f"cannot decode image {path}: {exc}") from exc
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).float() / 255.0


def resize(image: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Plain bilinear resize (no antialiasing) of a ``(C, H, W)`` tensor."""
    if tuple(image.shape[-2:]) == tuple(size):
        return image
    out = F.interpolate(
        image[None], size=tuple(size), mode="bilinear", align_corners=False, antialias=False
    )[0]
    return out.clamp(0.0, 1.0)


def normalize(raw: torch.Tensor, spec: PreprocessSpec | None = None) -> torch.Tensor:
    spec = spec or PreprocessSpec()
    return (raw - spec.mean) / spec.std


def denormalize(batch, spec: PreprocessSpec | None = None):
    """Invert the normalization and clamp to [0, 1].

    An ``ImageBatch`` must be tagged ``norm11`` and comes back tagged
    ``raw01``; bare tensors are returned as tensors.
    """
    spec = spec or PreprocessSpec()
    data = unwrap(batch, NORM11)
    out = (data * spec.std + spec.mean).clamp(0.0, 1.0)
    if isinstance(batch, ImageBatch):
        return ImageBatch(out, RAW01)
    return out


def preprocess(path, spec: PreprocessSpec | None = None, resize_to: bool = True) -> torch.Tensor:
    """Load an image and return a normalized ``(3, H, W)`` tensor in [-1, 1]."""
    spec = spec or PreprocessSpec()
    raw = read_image(path)
    if resize_to:
        raw = resize(raw, spec.size)
    return normalize(raw, spec)


def save_image(image: torch.Tensor, path) -> None:
    """Write a ``(3, H, W)`` [0, 1] tensor as an 8-bit RGB file.

    Each value ``v`` is stored as ``round(v * 255)``.
    """
    image = unwrap(image)
    if image.dim() == 4:
        if image.shape[0] != 1:
            raise ValueError("save_image expects a single image")
        image = image[0]
    check_range(image, RAW01)
    arr = torch.round(image.detach().clamp(0, 1) * 255.0).to(torch.uint8)
    arr = arr.permute(1, 2, 0).cpu().numpy()
    path = Path(path)
    try:
        Image.fromarray(arr).save(path)
    except (OSError, ValueError) as exc:
        raise ImageReadError(f"cannot write image {path}: {exc}") from exc


@dataclass
class PairedDataset(Dataset):
    """Input/reference pairs under ``root/input`` and ``root/target``.

    Pairs are matched by filename stem, so ``a.jpg`` pairs with ``a.png``.
    Items are ``(input, reference, name)`` with both images normalized.
    """

    root: Path
    entries: list[tuple[str, Path, Path]]
    spec: PreprocessSpec = field(default_factory=PreprocessSpec)
    resize_to: bool = True

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, index):
        name, inp, ref = self.entries[index]
        return (
            preprocess(inp, self.spec, self.resize_to),
            preprocess(ref, self.spec, self.resize_to),
            name,
        )

    @property
    def names(self) -> list[str]:
        return [e[0] for e in self.entries]


@dataclass
class UnpairedDataset(Dataset):
    root: Path
    entries: list[Path]
    spec: PreprocessSpec = field(default_factory=PreprocessSpec)
    resize_to: bool = True

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, index):
        path = self.entries[index]
        return preprocess(path, self.spec, self.resize_to), path.stem


def load_paired(root, spec: PreprocessSpec | None = None, resize_to: bool = True) -> PairedDataset:
    root = Path(root)
    inp_dir, tgt_dir = root / INPUT_DIR, root / TARGET_DIR
    for d in (inp_dir, tgt_dir):
        if not d.is_dir():
            raise DatasetError(f"missing directory {d}")
    inputs, targets = _index_dir(inp_dir), _index_dir(tgt_dir)
    for stem in sorted(set(inputs) ^ set(targets)):
        where = inputs.get(stem) or targets.get(stem)
        logger.warning("no counterpart for %s; excluded", where)
    matched = sorted(set(inputs) & set(targets))
    if not matched:
        raise DatasetError(f"no matching input/target pairs under {root}")
    entries = [(stem, inputs[stem], targets[stem]) for stem in matched]
    return PairedDataset(root, entries, spec or PreprocessSpec(), resize_to)


def load_unpaired(root, spec: PreprocessSpec | None = None, resize_to: bool = True) -> UnpairedDataset:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"missing directory {root}")
    entries = [p for _, p in sorted(_index_dir(root).items())]
    if not entries:
        raise DatasetError(f"no images found in {root}")
    return UnpairedDataset(root, entries, spec or PreprocessSpec(), resize_to)


class TensorPairs(Dataset):
    """In-memory pairs of normalized ``(N, 3, H, W)`` tensors."""

    def __init__(self, inputs: torch.Tensor, targets: torch.Tensor, names=None):
        if inputs.shape != targets.shape:
            raise ValueError("inputs and targets must have the same shape")
        self.inputs, self.targets = inputs, targets
        self.names = list(names) if names is not None else [f"{i:06d}" for i in range(len(inputs))]

    def __len__(self):
        return len(self.inputs)

    def __getitem__(self, index):
        return self.inputs[index], self.targets[index], self.names[index]


__all__ = [
    "DatasetError",
    "ImageReadError",
    "PairedDataset",
    "UnpairedDataset",
    "TensorPairs",
    "load_paired",
    "load_unpaired",
    "preprocess",
    "normalize",
    "denormalize",
    "read_image",
    "resize",
    "save_image",
    "is_image_file",
    "RangeError",
]
