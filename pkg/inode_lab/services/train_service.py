"""
Train service - mini-batch Adam over the variational objective
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from inode_lab.core.exceptions import (
    ConfigError,
    DataMismatchError,
    IntegrationError,
    ShapeError,
    TrainingError,
)
from inode_lab.models.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from inode_lab.models.dataset import Dataset
from inode_lab.models.latent_ode import LatentODE
from inode_lab.models.objective import LossBreakdown, total_objective
from inode_lab.models.params import ModelParams
from inode_lab.schemas.model import VariantConfig
from inode_lab.schemas.training import TrainConfig
from inode_lab.services.eval_service import export_csv, format_value

logger = logging.getLogger(__name__)

BEST_CHECKPOINT = "checkpoint.inode"
LAST_CHECKPOINT = "last.inode"
TRAINING_LOG = "training_log.csv"
LOG_COLUMNS = ("step", "epoch", "elbo", "recon", "kl", "ssl", "total", "val_mse")

# Sub-stream tags mixed into the seed entropy
_BATCH_ORDER, _EPS, _PAIRS = 0, 1, 2


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size, dtype=np.float64), v=np.zeros(size, dtype=np.float64), t=0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    cfg: TrainConfig,
) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update (descent on ``grads``)."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError("adam_step", params.shape, grads.shape, state.m.shape)
    t = state.t + 1
    if not np.all(np.isfinite(grads)):
        raise TrainingError("non-finite gradient", step=t)

    beta1, beta2 = cfg.betas
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_params = params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new_params, AdamState(m=m, v=v, t=t)


def batch_order(seed: int, epoch: int, n_seq: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, _BATCH_ORDER]).permutation(n_seq)


def step_eps(seed: int, step: int, shape: Tuple[int, int]) -> np.ndarray:
    return np.random.default_rng([seed, step, _EPS]).standard_normal(shape)


def pair_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, _PAIRS])


def kl_weight(epoch: int, warmup_epochs: int) -> float:
    """Linear 0 -> 1 ramp over the warm-up epochs, 1 afterwards."""
    if warmup_epochs <= 0:
        return 1.0
    return min(1.0, (epoch + 1) / warmup_epochs)


def validation_mse(model: LatentODE, params: ModelParams, ds: Dataset) -> float:
    """Posterior-mean reconstruction MSE over the full validation sequences."""
    eps = np.zeros((ds.n_seq, model.cfg.latent_dim))
    try:
        fwd = model.forward(params.as_dict(), ds.observations, ds.grid, eps)
    except IntegrationError as exc:
        logger.warning("Validation rollout failed: %s", exc.message)
        return float("inf")
    pred = np.transpose(np.asarray(fwd.y_mean), (1, 0, 2))
    mse = float(np.mean((pred - ds.observations) ** 2))
    return mse if np.isfinite(mse) else float("inf")


@dataclass
class TrainResult:
    out_dir: Path
    best_val_mse: float
    best_epoch: int
    steps: int
    epochs: int
    stopped_early: bool
    history: List[Dict[str, str]] = field(default_factory=list)

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / BEST_CHECKPOINT

    @property
    def log_path(self) -> Path:
        return self.out_dir / TRAINING_LOG


class TrainService:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg

    def _log_row(self, step: int, epoch: int, loss: LossBreakdown) -> Dict[str, str]:
        return {
            "step": str(step),
            "epoch": str(epoch),
            "elbo": format_value(loss.elbo),
            "recon": format_value(loss.recon_loglik),
            "kl": format_value(loss.kl),
            "ssl": format_value(loss.ssl),
            "total": format_value(loss.total),
            "val_mse": "",
        }

    def _write_log(self, out_dir: Path, rows: List[Dict[str, str]]) -> None:
        export_csv(out_dir / TRAINING_LOG, LOG_COLUMNS, [[r[c] for c in LOG_COLUMNS] for r in rows])

    def _read_log(self, out_dir: Path, up_to_step: int) -> List[Dict[str, str]]:
        path = out_dir / TRAINING_LOG
        if not path.is_file():
            return []
        with path.open(newline="", encoding="utf-8") as fh:
            return [row for row in csv.DictReader(fh) if int(row["step"]) <= up_to_step]

    def _check_data(self, model_cfg: VariantConfig, train_ds: Dataset, val_ds: Dataset) -> None:
        if train_ds.dim != val_ds.dim:
            raise DataMismatchError(
                f"train and validation dimensions differ ({train_ds.dim} vs {val_ds.dim})"
            )
        needed = model_cfg.context_frames
        if model_cfg.uses_modulator:
            needed = max(needed, model_cfg.window_length + 1)
        if train_ds.n_t < needed:
            raise ConfigError(
                f"training sequences have {train_ds.n_t} frames, the model needs {needed}",
                field="model.t_inv",
            )

    def train(
        self,
        model_cfg: VariantConfig,
        train_ds: Dataset,
        val_ds: Dataset,
        out_dir: Path | str,
        resume: bool = False,
        dataset_kind: Optional[str] = None,
    ) -> TrainResult:
        """
        Minimise -total_objective with Adam; keep the best-validation checkpoint.

        Batch order depends on (seed, epoch) and the reparameterisation noise on
        (seed, step), so identical configs give bit-identical checkpoints.
        """
        cfg = self.cfg
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self._check_data(model_cfg, train_ds, val_ds)

        model = LatentODE(model_cfg, train_ds.dim)
        n_seq = train_ds.n_seq
        n_batches = math.ceil(n_seq / cfg.batch_size)
        latent = model_cfg.latent_dim
        n_samples = model_cfg.mc_samples

        def snapshot(
            params: ModelParams, adam: AdamState, step: int, epoch: int, val: float, offset: int = 0
        ) -> Checkpoint:
            return Checkpoint(
                model_cfg=model_cfg,
                data_dim=train_ds.dim,
                params=params.copy(),
                step=step,
                epoch=epoch,
                seed=cfg.seed,
                val_mse=val,
                dataset_kind=dataset_kind,
                adam_m=adam.m.copy(),
                adam_v=adam.v.copy(),
                adam_t=adam.t,
                batch_offset=offset,
            )

        if resume:
            last = load_checkpoint(out_dir / LAST_CHECKPOINT)
            if last.model_cfg != model_cfg or last.data_dim != train_ds.dim:
                raise DataMismatchError("resume checkpoint was trained with a different model or dataset")
            params = last.params
            adam = AdamState(
                m=last.adam_m if last.adam_m is not None else np.zeros(params.size),
                v=last.adam_v if last.adam_v is not None else np.zeros(params.size),
                t=last.adam_t,
            )
            step, start_epoch, offset = last.step, last.epoch, last.batch_offset
            best_path = out_dir / BEST_CHECKPOINT
            if best_path.is_file():
                best = load_checkpoint(best_path)
                best_val, best_epoch = best.val_mse, best.epoch
            else:
                best_val, best_epoch = float("inf"), 0
            rows = self._read_log(out_dir, step)
            logger.info("Resuming from step %d (epoch %d, batch %d)", step, start_epoch, offset)
        else:
            params = model.init_params(cfg.seed)
            adam = AdamState.zeros(params.size)
            step, start_epoch, offset = 0, 0, 0
            best_val, best_epoch = float("inf"), 0
            rows = []
            save_checkpoint(snapshot(params, adam, 0, 0, float("inf")), out_dir / LAST_CHECKPOINT)

        logger.info(
            "Training %s (%s) on %d sequences: %d parameters, %d batches/epoch",
            model_cfg.variant, model_cfg.pathways, n_seq, params.size, n_batches,
        )

        stopped_early = False
        epochs_done = start_epoch
        for epoch in range(start_epoch, cfg.max_epochs):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            # no finite validation yet: count from the first epoch of this call
            stale = epoch - best_epoch if math.isfinite(best_val) else epoch - start_epoch
            if stale >= cfg.patience:
                stopped_early = True
                break

            order = batch_order(cfg.seed, epoch, n_seq)
            weight = kl_weight(epoch, cfg.kl_warmup_epochs)
            first = offset if epoch == start_epoch else 0
            done = first
            for b in range(first, n_batches):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                idx = order[b * cfg.batch_size: (b + 1) * cfg.batch_size]
                eps = step_eps(cfg.seed, step, (n_samples * idx.size, latent))
                try:
                    result = total_objective(
                        model,
                        params,
                        train_ds.observations[idx],
                        train_ds.grid,
                        cfg.lam,
                        eps,
                        pair_rng=pair_rng(cfg.seed, step),
                        kl_weight=weight,
                        max_pairs=cfg.ssl_max_pairs,
                    )
                    vector, adam = adam_step(params.vector, -result.gradient, adam, cfg)
                except (TrainingError, IntegrationError) as exc:
                    self._write_log(out_dir, rows)
                    seq = getattr(exc, "sequence_index", None)
                    raise TrainingError(
                        f"training aborted: {exc.message}",
                        step=step + 1,
                        sequence_index=int(idx[seq]) if seq is not None else None,
                    ) from exc
                params = params.with_vector(vector)
                step += 1
                rows.append(self._log_row(step, epoch, result.breakdown))
                done += 1

            if done < n_batches:
                # step cap hit mid-epoch: resume picks up at the next batch
                save_checkpoint(snapshot(params, adam, step, epoch, float("inf"), done), out_dir / LAST_CHECKPOINT)
                logger.info("Step cap reached at epoch %d batch %d/%d", epoch, done, n_batches)
                break
            val = validation_mse(model, params, val_ds)
            rows[-1]["val_mse"] = format_value(val)
            completed = epochs_done = epoch + 1
            if val < best_val:
                best_val, best_epoch = val, completed
                save_checkpoint(snapshot(params, adam, step, completed, val), out_dir / BEST_CHECKPOINT)
            save_checkpoint(snapshot(params, adam, step, completed, val), out_dir / LAST_CHECKPOINT)
            self._write_log(out_dir, rows)
            logger.info(
                "epoch %d step %d total=%.4f val_mse=%.6f (best %.6f @ epoch %d)",
                completed, step, float(rows[-1]["total"]), val, best_val, best_epoch,
            )

        self._write_log(out_dir, rows)
        if not (out_dir / BEST_CHECKPOINT).is_file():
            # no epoch finished; the last good state doubles as the best one
            last = load_checkpoint(out_dir / LAST_CHECKPOINT)
            save_checkpoint(last, out_dir / BEST_CHECKPOINT)
        return TrainResult(
            out_dir=out_dir,
            best_val_mse=best_val,
            best_epoch=best_epoch,
            steps=step,
            epochs=epochs_done,
            stopped_early=stopped_early,
            history=rows,
        )
