"""
Ablation service - sweep one experiment axis over a grid, several seeds per setting
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from inode_lab.core.exceptions import ConfigError
from inode_lab.models.checkpoint import load_checkpoint
from inode_lab.models.dataset import Dataset
from inode_lab.schemas.experiment import ExperimentConfig
from inode_lab.schemas.metrics import METRIC_COLUMNS, AggregateRow, MetricTable
from inode_lab.schemas.solver import SolverSpec
from inode_lab.services.eval_service import (
    EvalService,
    aggregate_over_seeds,
    export_aggregate,
    export_csv,
    resolve_horizons,
)
from inode_lab.services.train_service import TrainService

logger = logging.getLogger(__name__)

DEFAULT_GRIDS: Dict[str, List[Any]] = {
    "n_train": [100, 250, 500],
    "t_inv": [10, 20, 40, 80],
    "solver": ["euler", "rk4", "dopri5"],
    "dims": [(2, 2), (2, 8), (8, 2), (4, 4), (8, 8), (16, 16)],
    "lambda": [0.0, 1.0, 10.0, 100.0, 1000.0],
    "variant": ["node", "inode", "sinode"],
}
AXES: Tuple[str, ...] = tuple(DEFAULT_GRIDS)


def setting_label(axis: str, value: Any) -> str:
    if axis == "dims":
        q_x, q_c = value
        return f"dims={q_x}x{q_c}"
    return f"{axis}={value}"


def apply_setting(cfg: ExperimentConfig, axis: str, value: Any) -> ExperimentConfig:
    """Config with one axis set to ``value``; re-validated so bad combinations surface early."""
    data = cfg.resolved()
    model, train = data["model"], data["train"]
    if axis == "n_train":
        # applied by subsetting the training split
        return cfg
    if axis == "t_inv":
        model["t_inv"] = int(value)
        if model.get("node_t_in") is not None:
            model["node_t_in"] = int(value)
    elif axis == "solver":
        model["solver"] = SolverSpec(kind=value).model_dump(mode="json")
    elif axis == "dims":
        model["q_x"], model["q_c"] = (int(v) for v in value)
    elif axis == "lambda":
        model["variant"] = "sinode"
        train["lam"] = float(value)
    elif axis == "variant":
        model["variant"] = value
    else:
        raise ConfigError(f"unknown ablation axis '{axis}' (choose from {', '.join(AXES)})", field="axis")
    try:
        return ExperimentConfig.model_validate(data)
    except ValueError as exc:
        raise ConfigError(f"{setting_label(axis, value)} is not a valid setting: {exc}", field="ablation.values") from exc


@dataclass(frozen=True)
class AblationRun:
    axis: str
    value: Any
    seed: int
    cfg: ExperimentConfig

    @property
    def label(self) -> str:
        return setting_label(self.axis, self.value)

    def run_dir(self, root: Path) -> Path:
        return root / self.label.replace("=", "_") / f"seed_{self.seed}"


def expand_runs(cfg: ExperimentConfig, axis: str) -> List[AblationRun]:
    if axis not in DEFAULT_GRIDS:
        raise ConfigError(f"unknown ablation axis '{axis}' (choose from {', '.join(AXES)})", field="axis")
    values = cfg.ablation.values if cfg.ablation.values is not None else DEFAULT_GRIDS[axis]
    runs = []
    for value in values:
        if axis == "dims":
            value = tuple(value)
        base = apply_setting(cfg, axis, value)
        for seed in cfg.ablation.seeds:
            seeded = base.model_copy(
                update={
                    "train": base.train.model_copy(update={"seed": seed}),
                    "eval": base.eval.model_copy(update={"seed": seed}),
                }
            )
            runs.append(AblationRun(axis=axis, value=value, seed=seed, cfg=seeded))
    return runs


def _execute(job: Tuple[AblationRun, Dict[str, Dataset], str, Optional[int]]) -> MetricTable:
    """Train and evaluate a single (setting, seed); module-level so worker processes can unpickle it."""
    run, splits, root, train_n_t = job
    run_dir = run.run_dir(Path(root))
    cfg = run.cfg

    train_ds = splits["train"]
    if run.axis == "n_train":
        n = int(run.value)
        if n > train_ds.n_seq:
            raise ConfigError(f"n_train={n} exceeds the {train_ds.n_seq} generated sequences", field="ablation.values")
        train_ds = train_ds.subset(range(n))

    TrainService(cfg.train).train(cfg.model, train_ds, splits["val"], run_dir)
    ckpt = load_checkpoint(run_dir / "checkpoint.inode")
    test_ds = splits["test"]
    horizons = resolve_horizons(
        cfg.eval.horizons,
        t_in=cfg.model.t_in,
        n_t=train_n_t or train_ds.n_t,
        max_len=test_ds.n_t,
    )
    result = EvalService(cfg.eval).mse_at_horizons(ckpt, test_ds, horizons)
    logger.info("%s seed %d done", run.label, run.seed)
    return result.table


@dataclass
class AblationReport:
    axis: str
    runs: List[Tuple[AblationRun, MetricTable]]
    aggregate: List[AggregateRow]
    files: Dict[str, str]


class AblationService:
    def run(
        self,
        cfg: ExperimentConfig,
        axis: str,
        splits: Dict[str, Dataset],
        out_dir: Path | str,
        parallel: int = 1,
        train_n_t: Optional[int] = None,
    ) -> AblationReport:
        """Every (setting, seed) pair is trained and evaluated independently."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        runs = expand_runs(cfg, axis)
        logger.info("Ablation over %s: %d runs (%d-way parallel)", axis, len(runs), max(1, parallel))

        jobs = [(run, splits, str(out_dir), train_n_t) for run in runs]
        if parallel > 1:
            with Pool(parallel) as pool:
                tables = pool.map(_execute, jobs)
        else:
            tables = [_execute(job) for job in jobs]

        per_run_rows = []
        aggregate: List[AggregateRow] = []
        for value in dict.fromkeys(run.value for run in runs):
            label = setting_label(axis, value)
            group = [t for r, t in zip(runs, tables) if r.value == value]
            aggregate.extend(aggregate_over_seeds(group, setting=label))
        for run, table in zip(runs, tables):
            per_run_rows.extend([run.label, *row.values()] for row in table.rows)

        files = {
            "runs": export_csv(out_dir / f"ablation_{axis}_runs.csv", ["setting", *METRIC_COLUMNS], per_run_rows).name,
            "aggregate": export_aggregate(out_dir / f"ablation_{axis}.csv", aggregate).name,
        }
        (out_dir / f"ablation_{axis}_settings.json").write_text(
            json.dumps(
                [{"setting": r.label, "seed": r.seed, "dir": str(r.run_dir(out_dir))} for r in runs],
                indent=2,
            ),
            encoding="utf-8",
        )
        for row in aggregate:
            logger.info("%s %s: %.6f +- %.6f over %d seeds", row.setting, row.horizon_label,
                        row.mse_mean, row.mse_std, row.n_seeds)
        return AblationReport(axis=axis, runs=list(zip(runs, tables)), aggregate=aggregate, files=files)
