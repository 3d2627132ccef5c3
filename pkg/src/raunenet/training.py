"""Training loop, checkpoint container and preview grids."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
from torch.utils.data import DataLoader, Dataset

from .config import NetworkConfig, TrainConfig, to_dict, train_config_from_dict
from .data import save_image
from .losses import CompositeLoss
from .model import PassthroughNet, RauneNet, parameter_checksum

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RAUNECK\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI32sQ")
HISTORY_HEADER = ("iter", "epoch", "total", "pcont", "ssim", "scont")
PREVIEW_SAMPLES = 4
GUTTER = 2


class CheckpointError(RuntimeError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, names, breakdown):
        self.names = list(names)
        self.breakdown = dict(breakdown)
        super().__init__(f"non-finite loss on batch {self.names}: {self.breakdown}")


@dataclass
class CheckpointMeta:
    epoch: int
    iteration: int
    arch: str = "raune"
    network_config: dict | None = None
    train_config: dict | None = None
    parameter_checksum: str = ""
    format_version: int = FORMAT_VERSION


# ------------------------------------------------------------- checkpoints


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(net: nn.Module, optimizer_state, meta: CheckpointMeta, path) -> Path:
    """Write ``net``'s state, optimizer state and ``meta`` atomically.

    Layout: magic, format version, SHA-256 of the payload, payload length,
    then the payload (a torch-serialized dict of named tensors).
    """
    state = {k: v.detach().cpu().clone() for k, v in net.state_dict().items()}
    meta = dataclasses.replace(meta, parameter_checksum=parameter_checksum(state))
    buf = io.BytesIO()
    torch.save(
        {"meta": dataclasses.asdict(meta), "model": state, "optimizer": optimizer_state}, buf
    )
    payload = buf.getvalue()
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, FORMAT_VERSION, hashlib.sha256(payload).digest(), len(payload)
    )
    path = Path(path)
    _atomic_write(path, header + payload)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise CorruptCheckpointError(f"{path}: truncated header")
    magic, version, digest, length = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}"
        )
    payload = blob[_HEADER.size :]
    if len(payload) != length or hashlib.sha256(payload).digest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    content = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    if parameter_checksum(content["model"]) != content["meta"]["parameter_checksum"]:
        raise CorruptCheckpointError(f"{path}: parameter checksum mismatch")
    return content


def network_from_meta(meta: CheckpointMeta) -> nn.Module:
    if meta.arch == "passthrough":
        return PassthroughNet()
    if meta.arch != "raune":
        raise CheckpointError(f"unknown architecture {meta.arch!r}")
    return RauneNet(NetworkConfig(**meta.network_config))


def load_checkpoint(path):
    """Return ``(net, optimizer_state, meta)`` from a checkpoint file."""
    content = read_checkpoint(path)
    meta = CheckpointMeta(**content["meta"])
    net = network_from_meta(meta)
    net.load_state_dict(content["model"])
    net.eval()
    return net, content["optimizer"], meta


# --------------------------------------------------------------- training


def make_optimizer(net: nn.Module, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))


def training_step(net, batch, optimizer, criterion):
    """One Adam update on the composite loss; returns the loss breakdown."""
    x, y = batch[0], batch[1]
    names = batch[2] if len(batch) > 2 else []
    net.train(True)
    optimizer.zero_grad(set_to_none=True)
    total, breakdown = criterion(net(x), y)
    if not all(math.isfinite(v) for v in breakdown.values()):
        raise NonFiniteLossError(names, breakdown)
    total.backward()
    optimizer.step()
    return breakdown


def _epoch_loader(dataset: Dataset, cfg: TrainConfig, epoch: int) -> DataLoader:
    gen = torch.Generator().manual_seed(cfg.seed * 1_000_003 + epoch)
    return DataLoader(
        dataset, batch_size=cfg.batch_size, shuffle=cfg.shuffle, generator=gen, num_workers=0
    )


def checkpoint_epochs(epochs: int, every: int) -> list[int]:
    return [e for e in range(1, epochs + 1) if e % every == 0]


def preview_grid(net: nn.Module, samples) -> torch.Tensor:
    """Tile inputs, outputs and (when present) references, one column per sample.

    ``samples`` is a sequence of ``(input, reference_or_None)`` normalized
    ``(3, H, W)`` tensors of equal size. Returns a [0, 1] ``(3, H', W')`` grid.
    """
    inputs = torch.stack([s[0] for s in samples])
    was_training = net.training
    net.eval()
    with torch.no_grad():
        outputs = net(inputs)
    net.train(was_training)
    rows = [inputs, outputs]
    if all(s[1] is not None for s in samples):
        rows.append(torch.stack([s[1] for s in samples]))
    n = len(samples)
    _, h, w = inputs.shape[1:]
    grid = torch.ones(3, len(rows) * h + (len(rows) - 1) * GUTTER, n * w + (n - 1) * GUTTER)
    for r, row in enumerate(rows):
        for c in range(n):
            top, left = r * (h + GUTTER), c * (w + GUTTER)
            grid[:, top : top + h, left : left + w] = (row[c] * 0.5 + 0.5).clamp(0, 1)
    return grid


def preview_samples(net: nn.Module, samples, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_image(preview_grid(net, samples), path)
    return path


def preview_path(output_dir: Path, iteration: int) -> Path:
    return Path(output_dir) / "previews" / f"preview_iter_{iteration:07d}.png"


def _format_row(iteration, epoch, breakdown):
    return [iteration, epoch] + [repr(breakdown[k]) for k in HISTORY_HEADER[2:]]


def _prepare_history(path: Path, last_iteration: int | None) -> None:
    """Start a fresh history file, or keep rows up to ``last_iteration`` on resume."""
    if last_iteration is None or not path.exists():
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow(HISTORY_HEADER)
        return
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= last_iteration]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(kept)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    final_checkpoint: Path | None = None
    previews: list[Path] = field(default_factory=list)
    iteration: int = 0


def train(
    cfg: TrainConfig,
    dataset: Dataset,
    net: nn.Module,
    criterion=None,
    output_dir=None,
    preview_set=None,
    resume=None,
    max_iterations: int | None = None,
) -> TrainResult:
    """Train ``net`` on ``dataset`` with Adam and the composite loss.

    ``dataset`` yields ``(input, reference[, name])`` normalized tensors.
    With an ``output_dir``, checkpoints land in ``checkpoints/`` every
    ``cfg.checkpoint_every`` epochs plus ``final.ckpt``, the per-iteration
    loss history in ``loss_history.csv`` and preview grids in
    ``previews/``. ``resume`` names a checkpoint to continue from.
    ``max_iterations`` stops early (after a final checkpoint) once reached.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(cfg.deterministic)
    try:
        return _train(cfg, dataset, net, criterion, output_dir, preview_set, resume, max_iterations)
    finally:
        torch.use_deterministic_algorithms(previous)


def _train(cfg, dataset, net, criterion, output_dir, preview_set, resume, max_iterations):
    criterion = criterion or CompositeLoss(cfg.loss_weights)
    optimizer = make_optimizer(net, cfg)
    start_epoch, iteration = 1, 0
    if resume is not None:
        content = read_checkpoint(resume)
        meta = CheckpointMeta(**content["meta"])
        net.load_state_dict(content["model"])
        if content["optimizer"]:
            optimizer.load_state_dict(content["optimizer"])
        start_epoch, iteration = meta.epoch + 1, meta.iteration
        logger.info("resuming from %s at epoch %d", resume, meta.epoch)

    out = Path(output_dir) if output_dir is not None else None
    history_path = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        history_path = out / "loss_history.csv"
        _prepare_history(history_path, iteration if resume is not None else None)
    samples = list(preview_set)[:PREVIEW_SAMPLES] if preview_set is not None else []

    result = TrainResult(iteration=iteration)

    def snapshot(epoch, name):
        meta = CheckpointMeta(
            epoch=epoch,
            arch="passthrough" if isinstance(net, PassthroughNet) else "raune",
            iteration=iteration,
            network_config=to_dict(net.config) if getattr(net, "config", None) else None,
            train_config=to_dict(cfg),
        )
        return save_checkpoint(net, optimizer.state_dict(), meta, out / "checkpoints" / name)

    epoch = start_epoch - 1
    stop = False
    for epoch in range(start_epoch, cfg.epochs + 1):
        torch.manual_seed(cfg.seed * 1_000_003 + epoch)
        rows = []
        for batch in _epoch_loader(dataset, cfg, epoch):
            breakdown = training_step(net, batch, optimizer, criterion)
            iteration += 1
            record = {"iter": iteration, "epoch": epoch, **breakdown}
            result.history.append(record)
            rows.append(_format_row(iteration, epoch, breakdown))
            if out is not None and samples and iteration % cfg.preview_every == 0:
                result.previews.append(
                    preview_samples(net, samples, preview_path(out, iteration))
                )
            if max_iterations is not None and iteration >= max_iterations:
                stop = True
                break
        if history_path is not None:
            with open(history_path, "a", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerows(rows)
        logger.info("epoch %d iter %d loss %s", epoch, iteration, rows[-1][2])
        if out is not None and epoch % cfg.checkpoint_every == 0 and not stop:
            result.checkpoints.append(snapshot(epoch, f"epoch_{epoch:04d}.ckpt"))
        if stop:
            break
    result.iteration = iteration
    if out is not None:
        result.final_checkpoint = snapshot(epoch, "final.ckpt")
    net.eval()
    return result


def read_history(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {"iter": int(r["iter"]), "epoch": int(r["epoch"]), **{k: float(r[k]) for k in HISTORY_HEADER[2:]}}
        for r in rows
    ]


def restore_train_config(meta: CheckpointMeta) -> TrainConfig:
    return train_config_from_dict(meta.train_config)
