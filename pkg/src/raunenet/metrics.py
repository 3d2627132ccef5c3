"""Full-reference PSNR/SSIM evaluation and CSV reporting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import SsimParams
from .data import ImageReadError, PairedDataset, read_image, resize
from .losses import ssim as _mean_ssim
from .model import enhance_any_size, forward
from .validation import RAW01, check_same_shape, unwrap

logger = logging.getLogger(__name__)

CSV_HEADER = ("dataset", "image", "psnr", "ssim")
SUMMARY_ID = "__summary__"


def psnr(x, y) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images (peak 1.0).

    Identical images give ``math.inf``.
    """
    x, y = unwrap(x, RAW01), unwrap(y, RAW01)
    check_same_shape(x, y)
    mse = float(((x.double() - y.double()) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim_metric(x, y, params: SsimParams | None = None) -> float:
    """Mean SSIM, shared with the training loss implementation."""
    x, y = unwrap(x, RAW01), unwrap(y, RAW01)
    if x.dim() == 3:
        x, y = x[None], y[None]
    return float(_mean_ssim(x, y, params))


@dataclass(frozen=True)
class EvalRecord:
    dataset: str
    image: str
    psnr: float = math.nan
    ssim: float = math.nan
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class EvalSummary:
    dataset: str
    count: int
    failed: int
    mean_psnr: float
    mean_ssim: float


def _mean(values) -> float:
    values = list(values)
    if not values:
        return math.nan
    # identical pairs contribute inf, which fsum propagates
    return math.fsum(values) / len(values)


def summarize(records, dataset: str = "") -> EvalSummary:
    good = [r for r in records if r.ok]
    return EvalSummary(
        dataset=dataset,
        count=len(good),
        failed=len(records) - len(good),
        mean_psnr=_mean(r.psnr for r in good),
        mean_ssim=_mean(r.ssim for r in good),
    )


def quantize(x: torch.Tensor) -> torch.Tensor:
    """Snap raw01 values to the 8-bit grid, matching what a saved PNG holds."""
    return torch.round(x * 255.0) / 255.0


def evaluate_dataset(
    net,
    dataset: PairedDataset,
    params: SsimParams | None = None,
    resolution: str = "256",
    dataset_id: str | None = None,
):
    """Enhance every input and score it against its reference.

    ``resolution="256"`` scores at the preprocessing size; ``"native"``
    keeps each image's own size (inputs are padded to a valid size and
    cropped back). Resized images and outputs are snapped to 8-bit
    levels, so the numbers match those of images stored as PNGs. Images that fail to load yield a record with ``error``
    set and are left out of the summary. Returns ``(records, summary)``
    with records ordered by image id.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if resolution not in ("256", "native"):
        raise ValueError(f"resolution must be '256' or 'native', got {resolution!r}")
    dataset_id = dataset_id or Path(dataset.root).name
    spec = dataset.spec
    records = []
    for name, inp_path, ref_path in sorted(dataset.entries, key=lambda e: e[0]):
        try:
            inp, ref = read_image(inp_path), read_image(ref_path)
        except ImageReadError as exc:
            logger.error("%s", exc)
            records.append(EvalRecord(dataset_id, name, error=str(exc)))
            continue
        if resolution == "256":
            inp, ref = quantize(resize(inp, spec.size)), quantize(resize(ref, spec.size))
            out = forward(net, (inp[None] - spec.mean) / spec.std)
        else:
            if ref.shape != inp.shape:
                ref = quantize(resize(ref, tuple(inp.shape[-2:])))
            out = enhance_any_size(net, (inp[None] - spec.mean) / spec.std)
        out = quantize((out * spec.std + spec.mean).clamp(0.0, 1.0))
        ref = ref[None]
        records.append(EvalRecord(dataset_id, name, psnr(out, ref), ssim_metric(out, ref, params)))
    return records, summarize(records, dataset_id)


def _fmt(value: float) -> str:
    if math.isnan(value):
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


def write_csv(records, summary: EvalSummary, path) -> None:
    """Write one row per image plus a final ``__summary__`` row of means."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow((r.dataset, r.image, _fmt(r.psnr), _fmt(r.ssim)))
        writer.writerow(
            (summary.dataset, SUMMARY_ID, _fmt(summary.mean_psnr), _fmt(summary.mean_ssim))
        )


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def format_summary(summary: EvalSummary) -> str:
    def three(v):
        return "inf" if math.isinf(v) else f"{v:.3f}"

    return (
        f"{summary.dataset}: {summary.count} images"
        + (f" ({summary.failed} failed)" if summary.failed else "")
        + f"  PSNR {three(summary.mean_psnr)}  SSIM {three(summary.mean_ssim)}"
    )

