"""
Command-line entry point.

Usage:
  python -m inode_lab generate --config configs/sinusoid.json
  python -m inode_lab train    --config configs/sinusoid.json [--resume]
  python -m inode_lab eval     --config configs/sinusoid.json [--horizons tin,nt,3nt]
  python -m inode_lab eval     --checkpoint runs/sinusoid/train/checkpoint.inode --dataset runs/sinusoid/data
  python -m inode_lab ablate   --config configs/lv_reduced.json --axis t_inv --parallel 4

Exit codes: 0 success, 1 runtime failure, 2 missing artifact, 3 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from inode_lab import __version__
from inode_lab.core.config import apply_thread_cap
from inode_lab.core.exceptions import (
    EXIT_CONFIG,
    EXIT_OK,
    ConfigError,
    MissingArtifactError,
    handle_cli_errors,
)
from inode_lab.core.logging import setup_logging
from inode_lab.models.checkpoint import load_checkpoint
from inode_lab.models.dataset import Dataset
from inode_lab.schemas.dataset import SPLITS
from inode_lab.schemas.experiment import ExperimentConfig
from inode_lab.schemas.training import EvalConfig
from inode_lab.services.ablation_service import AXES, AblationService
from inode_lab.services.datagen_service import (
    MANIFEST_NAME,
    generate_splits,
    load_split,
    read_manifest,
    write_dataset_directory,
)
from inode_lab.services.eval_service import EvalService, resolve_horizons
from inode_lab.services.train_service import BEST_CHECKPOINT, TrainService

logger = logging.getLogger(__name__)

RESOLVED_CONFIG = "config.resolved.json"


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this command", field="config")
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_root(args: argparse.Namespace, cfg: Optional[ExperimentConfig]) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None:
        return Path(cfg.output_dir)
    raise ConfigError("--out is required when no config is given", field="out")


def _data_dir(args: argparse.Namespace, cfg: Optional[ExperimentConfig]) -> Path:
    if getattr(args, "dataset", None):
        return Path(args.dataset)
    if cfg is not None and cfg.dataset.path:
        return Path(cfg.dataset.path)
    return _out_root(args, cfg) / "data"


def _write_snapshot(out_dir: Path, payload: Dict[str, Any]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / RESOLVED_CONFIG).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def _load_splits(data_dir: Path) -> Dict[str, Dataset]:
    return {split: load_split(data_dir, split) for split in SPLITS}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@handle_cli_errors
def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if cfg.dataset.gen is None:
        raise ConfigError("generate needs a 'gen' section", field="dataset.gen")
    out_dir = Path(args.out) / "data" if args.out else _data_dir(args, cfg)
    manifest = write_dataset_directory(
        cfg.dataset.kind, cfg.dataset.gen, out_dir, t_in=cfg.model.t_in, t_inv=cfg.model.t_inv
    )
    _write_snapshot(out_dir, {"command": "generate", "config": cfg.resolved()})
    logger.info("Wrote %s splits %s to %s", manifest.kind, sorted(manifest.files), out_dir)
    return EXIT_OK


@handle_cli_errors
def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data_dir = _data_dir(args, cfg)
    manifest = read_manifest(data_dir)
    if manifest.kind != cfg.dataset.kind:
        raise ConfigError(
            f"dataset directory holds '{manifest.kind}', config asks for '{cfg.dataset.kind}'",
            field="dataset.kind",
        )
    train_ds = load_split(data_dir, "train")
    val_ds = load_split(data_dir, "val")

    out_dir = _out_root(args, cfg) / "train"
    _write_snapshot(
        out_dir,
        {"command": "train", "config": cfg.resolved(), "dataset": str(data_dir), "resume": bool(args.resume)},
    )
    result = TrainService(cfg.train).train(
        cfg.model, train_ds, val_ds, out_dir, resume=args.resume, dataset_kind=manifest.kind
    )
    logger.info(
        "Training finished: %d steps, %d epochs, best val_mse %.6f at epoch %d%s",
        result.steps, result.epochs, result.best_val_mse, result.best_epoch,
        " (early stop)" if result.stopped_early else "",
    )
    return EXIT_OK


@handle_cli_errors
def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args) if args.config else None
    eval_cfg = cfg.eval if cfg is not None else EvalConfig()
    if cfg is None and args.seed is not None:
        eval_cfg = eval_cfg.model_copy(update={"seed": args.seed})

    ckpt_path = Path(args.checkpoint) if args.checkpoint else _out_root(args, cfg) / "train" / BEST_CHECKPOINT
    if not ckpt_path.is_file():
        raise MissingArtifactError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)

    data_dir = _data_dir(args, cfg)
    manifest = read_manifest(data_dir)
    test_ds = load_split(data_dir, "test")

    t_in = manifest.t_in or ckpt.model_cfg.t_in
    tokens: Sequence[str] = args.horizons.split(",") if args.horizons else eval_cfg.horizons
    horizons = resolve_horizons(tokens, t_in=t_in, n_t=manifest.train_n_t, max_len=test_ds.n_t)

    out_dir = _out_root(args, cfg) / "eval" if (args.out or cfg is not None) else ckpt_path.parent / "eval"
    _write_snapshot(
        out_dir,
        {
            "command": "eval",
            "config": cfg.resolved() if cfg is not None else None,
            "eval": eval_cfg.model_dump(mode="json"),
            "checkpoint": str(ckpt_path),
            "dataset": str(data_dir),
            "horizons": [[label, length] for label, length in horizons],
        },
    )
    report = EvalService(eval_cfg).run(ckpt, test_ds, horizons, out_dir)
    logger.info("Evaluation written to %s (%d sequences excluded)", report.out_dir, report.n_excluded)
    return EXIT_OK


@handle_cli_errors
def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if args.axis not in AXES:
        raise ConfigError(f"unknown axis '{args.axis}' (choose from {', '.join(AXES)})", field="axis")

    data_dir = _data_dir(args, cfg)
    if (data_dir / MANIFEST_NAME).is_file():
        manifest = read_manifest(data_dir)
        splits = _load_splits(data_dir)
        train_n_t = manifest.train_n_t
    elif cfg.dataset.gen is not None:
        logger.info("No dataset at %s; generating splits in memory", data_dir)
        splits = generate_splits(cfg.dataset.kind, cfg.dataset.gen)
        train_n_t = cfg.dataset.gen.n_t
    else:
        raise MissingArtifactError(f"dataset manifest not found: {data_dir / MANIFEST_NAME}")

    out_dir = _out_root(args, cfg) / f"ablate_{args.axis}"
    _write_snapshot(
        out_dir,
        {"command": "ablate", "axis": args.axis, "config": cfg.resolved(), "parallel": args.parallel},
    )
    report = AblationService().run(cfg, args.axis, splits, out_dir, parallel=args.parallel, train_n_t=train_n_t)
    logger.info("Ablation over %s written to %s", report.axis, out_dir / report.files["aggregate"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _non_negative_int(value: str) -> int:
    n = int(value)
    if n < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inode-lab", description="Invariant latent neural ODE experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="Experiment JSON file")
        p.add_argument("--out", help="Output root (defaults to the config's output_dir)")
        p.add_argument("--seed", type=_non_negative_int, help="Override every seed in the config")

    p = sub.add_parser("generate", help="Generate train/val/test datasets")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="Train a model and keep the best-validation checkpoint")
    common(p)
    p.add_argument("--dataset", help="Dataset directory (defaults to <out>/data)")
    p.add_argument("--resume", action="store_true", help="Continue from <out>/train/last.inode")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Compute metrics and exports for a checkpoint")
    common(p, config_required=False)
    p.add_argument("--checkpoint", help="Checkpoint file (defaults to <out>/train/checkpoint.inode)")
    p.add_argument("--dataset", help="Dataset directory (defaults to <out>/data)")
    p.add_argument("--horizons", help="Comma-separated horizons, e.g. tin,nt,3nt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="Sweep one axis over its grid with several seeds")
    common(p)
    p.add_argument("--axis", required=True, help=f"One of: {', '.join(AXES)}")
    p.add_argument("--dataset", help="Dataset directory (generated in memory when absent)")
    p.add_argument("--parallel", type=_positive_int, default=1, help="Worker processes")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    apply_thread_cap()
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage errors with 2, which is reserved for missing artifacts
        return EXIT_CONFIG if exc.code == 2 else int(exc.code or 0)
    return args.func(args)
