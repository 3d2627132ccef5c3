"""Command line entry points: ``train``, ``eval`` and ``enhance``.

Run settings come from a flat ``key = value`` config file (``#`` starts a
comment); command line flags override it. Every run directory receives a
``manifest.json`` with the fully resolved settings and where each came from.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import (
    ConfigError,
    LossWeights,
    NetworkConfig,
    PreprocessSpec,
    SsimParams,
    TrainConfig,
)
from .data import (
    DatasetError,
    ImageReadError,
    is_image_file,
    load_paired,
    normalize,
    read_image,
    resize,
    save_image,
)
from .losses import BackboneWeightsError, CompositeLoss, FeatureExtractorSpec, build_extractor
from .metrics import evaluate_dataset, format_summary, write_csv
from .model import build_network, enhance_any_size, forward
from .training import CheckpointError, NonFiniteLossError, load_checkpoint, train

logger = logging.getLogger("raunenet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
MANIFEST_NAME = "manifest.json"

_NETWORK_KEYS = [f.name for f in dataclasses.fields(NetworkConfig)]
_TRAIN_KEYS = [
    "lr", "beta1", "beta2", "epochs", "batch_size", "checkpoint_every",
    "preview_every", "seed", "deterministic",
]
_LOSS_KEYS = ["lambda_pcont", "lambda_ssim", "lambda_scont", "tap_weights", "ssim_window"]
_OTHER_DEFAULTS = {
    "train_data": "",
    "test_data": "",
    "image_size": 256,
    "backbone_weights": "",
    "output_dir": "runs/raunenet",
}


class UsageError(Exception):
    pass


def default_settings() -> dict:
    settings = dataclasses.asdict(NetworkConfig())
    train_defaults = TrainConfig()
    settings.update({k: getattr(train_defaults, k) for k in _TRAIN_KEYS})
    settings.update(
        lambda_pcont=1.0,
        lambda_scont=1.0,
        lambda_ssim=1.0,
        tap_weights=(1.0,) * 5,
        ssim_window=SsimParams().window_size,
    )
    settings.update(_OTHER_DEFAULTS)
    return settings


def _coerce(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {type(default).__name__}") from None
    return text.strip("\"'")


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file into typed settings."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from exc
    defaults = default_settings()
    values = {}
    for key, text in parser["run"].items():
        if key not in defaults:
            raise ConfigError(key, "unknown setting")
        values[key] = _coerce(key, text, defaults[key])
    return values


def resolve_settings(config_path, flags: dict) -> tuple[dict, dict]:
    """Merge defaults, config file and flags; flags win. Returns ``(settings, sources)``."""
    settings = default_settings()
    sources = {k: "default" for k in settings}
    if config_path:
        for k, v in read_config_file(config_path).items():
            settings[k], sources[k] = v, "config"
    for k, v in flags.items():
        if v is not None:
            settings[k], sources[k] = v, "flag"
    return settings, sources


def build_configs(settings: dict):
    network = NetworkConfig(**{k: settings[k] for k in _NETWORK_KEYS})
    weights = LossWeights(settings["lambda_pcont"], settings["lambda_ssim"], settings["lambda_scont"])
    train_cfg = TrainConfig(loss_weights=weights, **{k: settings[k] for k in _TRAIN_KEYS})
    size = int(settings["image_size"])
    preprocess = PreprocessSpec(size=(size, size))
    ssim_params = SsimParams(window_size=settings["ssim_window"])
    extractor_spec = FeatureExtractorSpec(
        weights_path=settings["backbone_weights"] or None,
        tap_weights=tuple(settings["tap_weights"]),
    )
    return network, train_cfg, preprocess, ssim_params, extractor_spec


def write_manifest(output_dir: Path, command: str, settings: dict, sources: dict, **extra) -> Path:
    network, train_cfg, preprocess, ssim_params, extractor_spec = build_configs(settings)
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "network": dataclasses.asdict(network),
        "train": dataclasses.asdict(train_cfg),
        "preprocess": dataclasses.asdict(preprocess),
        "ssim": dataclasses.asdict(ssim_params),
        "semantic": dataclasses.asdict(extractor_spec),
        "datasets": {"train": settings["train_data"], "test": settings["test_data"]},
        "seed": settings["seed"],
        "settings": {k: settings[k] for k in sorted(settings)},
        "sources": {k: sources[k] for k in sorted(sources)},
        **extra,
    }
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _require_dir(path: str, what: str) -> Path:
    if not path:
        raise UsageError(f"no {what} given")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} not found: {p}")
    return p


def cmd_train(args) -> int:
    flags = {
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "deterministic": args.deterministic,
        "output_dir": args.output_dir,
        "train_data": args.train_data,
        "test_data": args.test_data,
    }
    settings, sources = resolve_settings(args.config, flags)
    network, train_cfg, preprocess, ssim_params, extractor_spec = build_configs(settings)
    train_root = _require_dir(settings["train_data"], "training dataset")
    dataset = load_paired(train_root, preprocess)
    preview_source = dataset
    if settings["test_data"]:
        preview_source = load_paired(_require_dir(settings["test_data"], "test dataset"), preprocess)
    preview_set = [preview_source[i][:2] for i in range(min(4, len(preview_source)))]
    extractor = build_extractor(extractor_spec) if train_cfg.loss_weights.scont > 0 else None
    criterion = CompositeLoss(train_cfg.loss_weights, ssim_params, extractor, extractor_spec.tap_weights)

    output_dir = Path(settings["output_dir"])
    write_manifest(output_dir, "train", settings, sources, resume=args.resume)
    net = build_network(network, seed=train_cfg.seed)
    result = train(
        train_cfg,
        dataset,
        net,
        criterion,
        output_dir=output_dir,
        preview_set=preview_set,
        resume=args.resume,
    )
    last = result.history[-1] if result.history else {}
    print(f"trained {result.iteration} iterations; final loss {last.get('total', float('nan')):.5f}")
    print(f"final checkpoint: {result.final_checkpoint}")
    return EXIT_OK


def _load_net(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    net, _, meta = load_checkpoint(path)
    return net, meta


def cmd_eval(args) -> int:
    settings, sources = resolve_settings(args.config, {"output_dir": args.output_dir})
    _, _, preprocess, ssim_params, _ = build_configs(settings)
    net, _ = _load_net(args.checkpoint)
    dataset = load_paired(_require_dir(args.data, "evaluation dataset"), preprocess)
    records, summary = evaluate_dataset(
        net, dataset, ssim_params, resolution=args.eval_resolution, dataset_id=args.dataset_id
    )
    output_dir = Path(settings["output_dir"])
    write_manifest(
        output_dir,
        "eval",
        settings,
        sources,
        checkpoint=str(args.checkpoint),
        eval_data=str(args.data),
        eval_resolution=args.eval_resolution,
    )
    csv_path = output_dir / "metrics.csv"
    write_csv(records, summary, csv_path)
    print(format_summary(summary))
    print(f"metrics: {csv_path}")
    return EXIT_RUNTIME if summary.failed else EXIT_OK


def cmd_enhance(args) -> int:
    settings, sources = resolve_settings(args.config, {"output_dir": args.output_dir})
    _, _, preprocess, _, _ = build_configs(settings)
    net, _ = _load_net(args.checkpoint)
    in_dir = _require_dir(args.input_dir, "input directory")
    out_dir = Path(settings["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    written = 0
    for path in sorted(in_dir.iterdir()):
        if not is_image_file(path):
            if path.is_file():
                logger.warning("skipping non-image file %s", path)
            continue
        try:
            raw = read_image(path)
            if args.keep_size:
                out = enhance_any_size(net, normalize(raw, preprocess)[None])
            else:
                out = forward(net, normalize(resize(raw, preprocess.size), preprocess)[None])
            enhanced = (out[0] * preprocess.std + preprocess.mean).clamp(0.0, 1.0)
            save_image(enhanced, out_dir / path.name)
            written += 1
        except (ImageReadError, ValueError, RuntimeError) as exc:
            failures += 1
            logger.error("failed to enhance %s: %s", path, exc)
    write_manifest(
        out_dir,
        "enhance",
        settings,
        sources,
        checkpoint=str(args.checkpoint),
        input_dir=str(in_dir),
        keep_size=bool(args.keep_size),
    )
    print(f"enhanced {written} images into {out_dir}" + (f"; {failures} failed" if failures else ""))
    return EXIT_RUNTIME if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raunenet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network on a paired dataset")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--output-dir")
    p.add_argument("--train-data", help="paired dataset root with input/ and target/")
    p.add_argument("--test-data", help="paired dataset supplying preview samples")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint with PSNR/SSIM on a paired dataset")
    p.add_argument("checkpoint")
    p.add_argument("data", help="paired dataset root with input/ and target/")
    p.add_argument("--config")
    p.add_argument("--output-dir")
    p.add_argument("--eval-resolution", choices=("256", "native"), default="256")
    p.add_argument("--dataset-id")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("enhance", help="enhance every image in a directory")
    p.add_argument("checkpoint")
    p.add_argument("input_dir")
    p.add_argument("output_dir", nargs="?")
    p.add_argument("--config")
    p.add_argument("--output-dir", dest="output_dir_flag")
    p.add_argument("--keep-size", action="store_true")
    p.set_defaults(func=cmd_enhance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "output_dir_flag", None):
        args.output_dir = args.output_dir_flag
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetError, BackboneWeightsError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NonFiniteLossError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
