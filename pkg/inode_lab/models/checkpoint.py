"""
Checkpoint persistence: parameters, optimizer moments and the config that built them
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from inode_lab.core.config import settings
from inode_lab.core.exceptions import FormatError
from inode_lab.core.storage import read_container, write_container
from inode_lab.models.latent_ode import LatentODE
from inode_lab.models.params import ModelParams
from inode_lab.schemas.model import VariantConfig

CHECKPOINT_SUFFIX = ".inode"


@dataclass
class Checkpoint:
    model_cfg: VariantConfig
    data_dim: int
    params: ModelParams
    step: int = 0
    epoch: int = 0
    seed: int = 0
    val_mse: float = float("inf")
    dataset_kind: Optional[str] = None
    adam_m: Optional[np.ndarray] = None
    adam_v: Optional[np.ndarray] = None
    adam_t: int = 0
    # batches of `epoch` already applied; non-zero only for a step-capped run
    batch_offset: int = 0

    def build_model(self) -> LatentODE:
        return LatentODE(self.model_cfg, self.data_dim)


def save_checkpoint(ckpt: Checkpoint, path: Path | str) -> Path:
    header = {
        "model": ckpt.model_cfg.model_dump(mode="json"),
        "data_dim": ckpt.data_dim,
        "dataset_kind": ckpt.dataset_kind,
        # list of pairs: the header is written with sorted keys
        "layout": [[name, list(shape)] for name, shape in ckpt.params.layout.items()],
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "val_mse": ckpt.val_mse if np.isfinite(ckpt.val_mse) else None,
        "adam_t": ckpt.adam_t,
        "batch_offset": ckpt.batch_offset,
    }
    arrays = {"params": ckpt.params.vector}
    if ckpt.adam_m is not None and ckpt.adam_v is not None:
        arrays["adam_m"] = ckpt.adam_m
        arrays["adam_v"] = ckpt.adam_v
    return write_container(
        path,
        kind="checkpoint",
        version=settings.CHECKPOINT_FORMAT_VERSION,
        header=header,
        arrays=arrays,
    )


def load_checkpoint(path: Path | str) -> Checkpoint:
    header, arrays = read_container(path, kind="checkpoint", version=settings.CHECKPOINT_FORMAT_VERSION)
    try:
        model_cfg = VariantConfig.model_validate(header["model"])
        layout = {name: tuple(shape) for name, shape in header["layout"]}
        params = ModelParams(layout, arrays["params"])
        ckpt = Checkpoint(
            model_cfg=model_cfg,
            data_dim=int(header["data_dim"]),
            params=params,
            step=int(header["step"]),
            epoch=int(header["epoch"]),
            seed=int(header["seed"]),
            val_mse=float("inf") if header.get("val_mse") is None else float(header["val_mse"]),
            dataset_kind=header.get("dataset_kind"),
            adam_m=arrays.get("adam_m"),
            adam_v=arrays.get("adam_v"),
            adam_t=int(header.get("adam_t", 0)),
            batch_offset=int(header.get("batch_offset", 0)),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: header is missing key {exc}") from exc

    expected = ckpt.build_model().layout()
    if list(expected.items()) != list(params.layout.items()):
        raise FormatError(f"{path}: parameter layout does not match its model config")
    return ckpt
