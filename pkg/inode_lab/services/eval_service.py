"""
Eval service - forecasting MSE, embedding similarity, latent PCA and CSV export
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from inode_lab.core.exceptions import ConfigError, ContractError, DataMismatchError, IntegrationError
from inode_lab.models.checkpoint import Checkpoint
from inode_lab.models.dataset import Dataset
from inode_lab.models.latent_ode import LatentODE
from inode_lab.schemas.metrics import (
    AGGREGATE_COLUMNS,
    METRIC_COLUMNS,
    AggregateRow,
    MetricRow,
    MetricTable,
)
from inode_lab.schemas.training import EvalConfig

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12
PER_FRAME_COLUMNS = ("variant", "seed", "seq", "frame", "sq_err")

_HORIZON = re.compile(r"^(?:(\d+)?(nt)|(tin)|(\d+))$")


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def format_value(value) -> str:
    """Floats with 9 significant digits; everything else as ``str``."""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def export_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """RFC-4180 CSV with a header row; an empty ``rows`` gives a header-only file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def frame_labels(n_seq: int, n_t: int) -> List[str]:
    return [f"{s}:{t}" for s in range(n_seq) for t in range(n_t)]


def export_matrix(path: Path | str, matrix: np.ndarray, labels: Sequence[str]) -> Path:
    """Square matrix with ``seq:frame`` labels on both the header row and the first column."""
    matrix = np.asarray(matrix)
    if matrix.shape != (len(labels), len(labels)):
        raise ContractError(f"matrix {matrix.shape} does not match {len(labels)} labels")
    rows = ([label, *matrix[i]] for i, label in enumerate(labels))
    return export_csv(path, ["label", *labels], rows)


def export_metric_table(path: Path | str, table: MetricTable) -> Path:
    return export_csv(path, METRIC_COLUMNS, (r.values() for r in table.rows))


def export_aggregate(path: Path | str, rows: Sequence[AggregateRow]) -> Path:
    return export_csv(path, AGGREGATE_COLUMNS, (r.values() for r in rows))


# ---------------------------------------------------------------------------
# Horizons
# ---------------------------------------------------------------------------

def resolve_horizons(
    horizons: Sequence[str] | str,
    t_in: int,
    n_t: int,
    max_len: int,
) -> List[Tuple[str, int]]:
    """
    Expand horizon tokens into (label, frames).

    ``tin`` -> t_in, ``nt`` -> n_t, ``3nt`` -> 3 * n_t, a bare integer is taken literally.
    """
    if isinstance(horizons, str):
        horizons = [h for h in horizons.split(",")]
    tokens = [h.strip().lower() for h in horizons if h.strip()]
    if not tokens:
        raise ConfigError("at least one horizon is required", field="eval.horizons")

    out: List[Tuple[str, int]] = []
    for token in tokens:
        match = _HORIZON.match(token)
        if match is None:
            raise ConfigError(f"unknown horizon '{token}'", field="eval.horizons")
        if match.group(2):
            length = int(match.group(1) or 1) * n_t
        elif match.group(3):
            length = t_in
        else:
            length = int(match.group(4))
        if not 1 <= length <= max_len:
            raise ConfigError(
                f"horizon '{token}' = {length} frames exceeds the {max_len} available",
                field="eval.horizons",
            )
        out.append((token, length))
    return out


def frame_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Squared error per (sequence, frame), averaged over observation dims."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3:
        raise ContractError(f"prediction {pred.shape} and truth {truth.shape} must both be [S, T, D]")
    return np.mean((pred - truth) ** 2, axis=2)


def horizon_table(
    sq_err: np.ndarray,
    horizons: Sequence[Tuple[str, int]],
    variant: str,
    seed: int,
) -> MetricTable:
    """MSE over [0, h) per sequence, then mean and std across sequences."""
    rows = []
    for label, length in horizons:
        if length > sq_err.shape[1]:
            raise ConfigError(f"horizon {length} exceeds {sq_err.shape[1]} frames", field="eval.horizons")
        per_seq = sq_err[:, :length].mean(axis=1)
        rows.append(
            MetricRow(
                variant=variant,
                seed=seed,
                horizon_label=label,
                horizon_len=length,
                mse=float(per_seq.mean()),
                mse_std=float(per_seq.std()),
            )
        )
    return MetricTable(rows=rows)


# ---------------------------------------------------------------------------
# Similarity and PCA
# ---------------------------------------------------------------------------

@dataclass
class SimilarityResult:
    matrix: np.ndarray
    zero_norm: np.ndarray  # bool per row
    n_seq: int
    n_t: int


def cosine_similarity_matrix(embeddings: np.ndarray) -> SimilarityResult:
    """Pairwise cosine similarity of [S, P, q] embeddings, rows ordered sequence-major."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 3:
        raise ContractError(f"embeddings must be [S, P, q], got {emb.shape}")
    n_seq, n_t, q = emb.shape
    flat = emb.reshape(n_seq * n_t, q)
    sq_norm = np.sum(flat * flat, axis=1)
    zero = sq_norm == 0.0
    if zero.any():
        logger.warning("%d zero-norm embeddings; their similarities are 0", int(zero.sum()))
    unit = flat / np.sqrt(sq_norm + NORM_EPS ** 2)[:, None]
    matrix = unit @ unit.T
    matrix = 0.5 * (matrix + matrix.T)
    diag = np.where(zero, 0.0, 1.0)
    np.fill_diagonal(matrix, diag)
    return SimilarityResult(matrix=matrix, zero_norm=zero, n_seq=n_seq, n_t=n_t)


@dataclass(frozen=True)
class BlockSimilarity:
    within: float
    between: float


def block_similarity(matrix: np.ndarray, n_seq: int, n_t: int) -> BlockSimilarity:
    """Mean off-diagonal similarity inside sequence blocks vs across them."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (n_seq * n_t, n_seq * n_t):
        raise ContractError(f"matrix {matrix.shape} is not {n_seq}x{n_t} blocks")
    seq_of = np.repeat(np.arange(n_seq), n_t)
    same = seq_of[:, None] == seq_of[None, :]
    off_diag = ~np.eye(n_seq * n_t, dtype=bool)
    within_mask = same & off_diag
    between_mask = ~same
    within = float(matrix[within_mask].mean()) if within_mask.any() else float("nan")
    between = float(matrix[between_mask].mean()) if between_mask.any() else float("nan")
    return BlockSimilarity(within=within, between=between)


@dataclass
class PcaResult:
    projected: np.ndarray      # [S, T, k]
    explained: np.ndarray      # [k] variance fractions
    components: np.ndarray     # [q, k]
    mean: np.ndarray           # [q]


def pca_embed(latents: np.ndarray, k: int = 2) -> PcaResult:
    """Joint PCA over every (sequence, frame) latent point."""
    lat = np.asarray(latents, dtype=np.float64)
    if lat.ndim != 3:
        raise ContractError(f"latents must be [S, T, q], got {lat.shape}")
    n_seq, n_t, q = lat.shape
    if n_seq * n_t <= q:
        raise ContractError(f"PCA needs more than {q} points, got {n_seq * n_t}")
    if not 1 <= k <= q:
        raise ContractError(f"cannot take {k} components of a {q}-dim latent")

    points = lat.reshape(n_seq * n_t, q)
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / (points.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]

    # sign convention: largest-magnitude loading positive
    pivots = np.argmax(np.abs(eigvecs), axis=0)
    signs = np.sign(eigvecs[pivots, np.arange(q)])
    signs[signs == 0] = 1.0
    eigvecs = eigvecs * signs

    total = eigvals.sum()
    explained = eigvals[:k] / total if total > 0 else np.zeros(k)
    components = eigvecs[:, :k]
    projected = (centered @ components).reshape(n_seq, n_t, k)
    return PcaResult(projected=projected, explained=explained, components=components, mean=mean)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate_over_seeds(tables: Sequence[MetricTable], setting: str = "") -> List[AggregateRow]:
    """Mean and std (over seeds) of MSE per (variant, horizon)."""
    groups: Dict[Tuple[str, str, int], List[float]] = {}
    for table in tables:
        for row in table.rows:
            groups.setdefault((row.variant, row.horizon_label, row.horizon_len), []).append(row.mse)
    out = []
    for (variant, label, length), values in groups.items():
        arr = np.asarray(values)
        out.append(
            AggregateRow(
                setting=setting,
                variant=variant,
                horizon_label=label,
                horizon_len=length,
                n_seeds=arr.size,
                mse_mean=float(arr.mean()),
                mse_std=float(arr.std()),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Service
# ---------------------------------------------------------------------------

@dataclass
class HorizonEvaluation:
    table: MetricTable
    sq_err: np.ndarray           # [S, T] per-frame error (mean over dims); NaN rows excluded
    included: np.ndarray         # bool [S]
    latents: np.ndarray          # [S, T, q] sample-mean latent paths
    horizons: List[Tuple[str, int]] = field(default_factory=list)

    @property
    def n_excluded(self) -> int:
        return int((~self.included).sum())


@dataclass
class EvalReport:
    out_dir: Path
    table: MetricTable
    n_excluded: int
    similarity: Optional[BlockSimilarity]
    explained_variance: Optional[np.ndarray]
    files: Dict[str, str]


class EvalService:
    def __init__(self, cfg: EvalConfig):
        self.cfg = cfg

    def _check(self, ckpt: Checkpoint, ds: Dataset) -> LatentODE:
        if ds.dim != ckpt.data_dim:
            raise DataMismatchError(
                f"checkpoint expects {ckpt.data_dim}-dim observations, dataset has {ds.dim}"
            )
        model = ckpt.build_model()
        if ds.n_t < model.cfg.context_frames:
            raise DataMismatchError(
                f"dataset has {ds.n_t} frames, the model conditions on {model.cfg.context_frames}"
            )
        return model

    def _rollout(
        self, model: LatentODE, ckpt: Checkpoint, y: np.ndarray, ds: Dataset, n_frames: int, eps: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        ro = model.rollout(
            ckpt.params, y, ds.grid.with_points(n_frames), self.cfg.mc_samples, eps=eps
        )
        return ro.mean_prediction, ro.latents.mean(axis=0)

    def mse_at_horizons(
        self,
        ckpt: Checkpoint,
        ds: Dataset,
        horizons: Sequence[Tuple[str, int]],
    ) -> HorizonEvaluation:
        """
        Mean-of-samples forecast MSE over [0, h) for each horizon.

        Sequences whose rollout fails are excluded and counted.
        """
        if not horizons:
            raise ConfigError("at least one horizon is required", field="eval.horizons")
        model = self._check(ckpt, ds)
        n_frames = max(h for _, h in horizons)
        if n_frames > ds.n_t:
            raise ConfigError(f"horizon {n_frames} exceeds the {ds.n_t} test frames", field="eval.horizons")
        if n_frames < 2:
            n_frames = 2
        n_seq = ds.n_seq
        n_samples = self.cfg.mc_samples
        q = model.cfg.latent_dim
        eps = np.random.default_rng(self.cfg.seed).standard_normal((n_samples * n_seq, q))
        context = ds.observations[:, : model.cfg.context_frames]
        truth = ds.observations[:, :n_frames]

        pred = np.full((n_seq, n_frames, ds.dim), np.nan)
        latents = np.full((n_seq, n_frames, q), np.nan)
        try:
            pred[:], latents[:] = self._rollout(model, ckpt, context, ds, n_frames, eps)
        except IntegrationError as exc:
            logger.warning("Batched rollout failed (%s); evaluating sequences one by one", exc.message)
            per_seq_eps = eps.reshape(n_samples, n_seq, q)
            for n in range(n_seq):
                try:
                    p, z = self._rollout(model, ckpt, context[n: n + 1], ds, n_frames, per_seq_eps[:, n])
                    pred[n], latents[n] = p[0], z[0]
                except IntegrationError as seq_exc:
                    logger.warning("Sequence %d excluded: %s", n, seq_exc.message)

        sq_err = frame_errors(pred, truth)
        included = np.all(np.isfinite(sq_err), axis=1)
        if not included.all():
            logger.warning("%d of %d test sequences excluded from the metrics", int((~included).sum()), n_seq)
        if not included.any():
            raise IntegrationError("every test rollout failed")

        table = horizon_table(sq_err[included], horizons, ckpt.model_cfg.variant, ckpt.seed)
        return HorizonEvaluation(
            table=table,
            sq_err=sq_err,
            included=included,
            latents=latents,
            horizons=list(horizons),
        )

    def similarity(self, ckpt: Checkpoint, ds: Dataset, pathway: Optional[str] = None) -> SimilarityResult:
        """Per-frame (content) or per-window (modulator) embedding similarity."""
        model = self._check(ckpt, ds)
        active = model.active_pathways()
        if not active:
            raise ContractError("the model has no invariant pathway to embed")
        pathway = pathway or active[0]
        n_seq = min(self.cfg.similarity_n_seq, ds.n_seq)
        n_t = self.cfg.similarity_n_t
        frames = n_t + model.cfg.window_length if pathway == "modulator" else n_t
        if frames > ds.n_t:
            raise ConfigError(f"similarity needs {frames} frames, dataset has {ds.n_t}", field="eval.similarity_n_t")
        series = model.embedding_series(ckpt.params.as_dict(), ds.observations[:n_seq, :frames], pathway)
        return cosine_similarity_matrix(np.asarray(series))

    def run(
        self,
        ckpt: Checkpoint,
        ds: Dataset,
        horizons: Sequence[Tuple[str, int]],
        out_dir: Path | str,
    ) -> EvalReport:
        """Every export: metrics, per-frame errors, similarity matrix and latent PCA."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files: Dict[str, str] = {}

        result = self.mse_at_horizons(ckpt, ds, horizons)
        variant, seed = ckpt.model_cfg.variant, ckpt.seed
        files["metrics"] = export_metric_table(out_dir / "metrics.csv", result.table).name

        per_frame = (
            [variant, seed, n, t, result.sq_err[n, t]]
            for n in np.flatnonzero(result.included)
            for t in range(result.sq_err.shape[1])
        )
        files["per_frame_errors"] = export_csv(out_dir / "per_frame_errors.csv", PER_FRAME_COLUMNS, per_frame).name

        block = None
        model = ckpt.build_model()
        if model.active_pathways():
            sim = self.similarity(ckpt, ds)
            labels = frame_labels(sim.n_seq, sim.n_t)
            files["similarity"] = export_matrix(out_dir / "similarity_matrix.csv", sim.matrix, labels).name
            block = block_similarity(sim.matrix, sim.n_seq, sim.n_t)
            logger.info("Similarity: within %.4f, between %.4f", block.within, block.between)

        latents = result.latents[result.included]
        seq_ids = np.flatnonzero(result.included)
        k = min(self.cfg.pca_components, latents.shape[2])
        pca = pca_embed(latents, k=k)
        pc_cols = [f"pc{i + 1}" for i in range(k)]
        pca_rows = (
            [int(seq_ids[s]), t, *pca.projected[s, t]]
            for s in range(pca.projected.shape[0])
            for t in range(pca.projected.shape[1])
        )
        files["pca"] = export_csv(out_dir / "pca.csv", ["seq", "frame", *pc_cols], pca_rows).name
        files["explained_variance"] = export_csv(
            out_dir / "explained_variance.csv",
            ["component", "fraction"],
            ([f"pc{i + 1}", float(v)] for i, v in enumerate(pca.explained)),
        ).name

        summary = {
            "variant": variant,
            "seed": seed,
            "n_sequences": int(ds.n_seq),
            "n_excluded": result.n_excluded,
            "horizons": [[label, length] for label, length in horizons],
            "similarity": None if block is None else {"within": block.within, "between": block.between},
            "files": files,
        }
        (out_dir / "eval_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")

        for row in result.table.rows:
            logger.info("%s seed %d %s (%d frames): mse %.6f +- %.6f", variant, seed, row.horizon_label,
                        row.horizon_len, row.mse, row.mse_std)
        return EvalReport(
            out_dir=out_dir,
            table=result.table,
            n_excluded=result.n_excluded,
            similarity=block,
            explained_variance=pca.explained,
            files=files,
        )
