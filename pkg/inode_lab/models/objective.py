"""
Training objectives: ELBO terms, the self-supervised cosine term and their weighted sum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Dict, Optional

import numpy as np

from inode_lab.core.exceptions import ContractError, ShapeError, TrainingError
from inode_lab.models.latent_ode import LatentODE
from inode_lab.models.nets import ParamMap
from inode_lab.models.params import ModelParams
from inode_lab.numerics import diffnum
from inode_lab.numerics.diffnum import ArrayLike, Tape, value_of
from inode_lab.schemas.solver import TimeGrid

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    """elbo = recon_loglik - kl; total = recon_loglik - kl_weight * kl + lam * ssl."""
    elbo: float
    recon_loglik: float
    kl: float
    ssl: float
    total: float
    lam: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class SslResult:
    value: ArrayLike
    n_pairs: int
    skipped: bool


@dataclass(frozen=True)
class ObjectiveResult:
    breakdown: LossBreakdown
    gradient: np.ndarray  # d(total)/d(params), laid out like ModelParams.vector


def kl_diag_gaussian(mean: ArrayLike, log_var: ArrayLike) -> ArrayLike:
    """KL(N(mean, diag exp(log_var)) || N(0, I)), reduced over the last axis."""
    terms = diffnum.exp(log_var) + diffnum.square(mean) - 1.0 - log_var
    return 0.5 * diffnum.sum_(terms, axis=-1)


def recon_loglik(y: np.ndarray, y_mean: ArrayLike, sigma: ArrayLike, axis=None) -> ArrayLike:
    """Sum of log N(y | y_mean, sigma^2) over ``axis`` (all axes by default)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != value_of(y_mean).shape:
        raise ShapeError("recon_loglik", y.shape, value_of(y_mean).shape)
    resid = y - y_mean
    var = diffnum.square(sigma)
    logp = -0.5 * LOG_2PI - diffnum.log(sigma) - 0.5 * diffnum.square(resid) / var
    return diffnum.sum_(logp, axis=axis)


def ssl_loss(
    embeddings: ArrayLike,
    max_pairs: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> SslResult:
    """
    Mean cosine similarity over unordered within-sequence pairs i < j.

    ``embeddings`` is [B, P, q]: P per-frame or per-window embeddings for each of B
    sequences. Only positive pairs enter; there is no cross-sequence term. With more
    than ``max_pairs`` pairs per sequence a uniform subset is drawn from ``rng``.
    The value is to be maximised.
    """
    shape = value_of(embeddings).shape
    if len(shape) != 3:
        raise ShapeError("ssl_loss", shape)
    n_batch, n_emb, _ = shape
    if n_emb < 2 or n_batch == 0:
        logger.warning("ssl_loss: %d embeddings per sequence, every sequence skipped", n_emb)
        return SslResult(value=0.0, n_pairs=0, skipped=True)

    norm = diffnum.sqrt(diffnum.sum_(diffnum.square(embeddings), axis=-1, keepdims=True) + NORM_EPS ** 2)
    unit = embeddings / norm

    rows, cols = np.triu_indices(n_emb, k=1)
    if max_pairs is not None and rows.size > max_pairs:
        if rng is None:
            raise ContractError("ssl_loss needs an rng to subsample pairs")
        picks = [np.sort(rng.choice(rows.size, size=max_pairs, replace=False)) for _ in range(n_batch)]
        b_idx = np.repeat(np.arange(n_batch), max_pairs)
        i_idx = np.concatenate([rows[p] for p in picks])
        j_idx = np.concatenate([cols[p] for p in picks])
    else:
        b_idx = np.repeat(np.arange(n_batch), rows.size)
        i_idx = np.tile(rows, n_batch)
        j_idx = np.tile(cols, n_batch)

    left = diffnum.getitem(unit, (b_idx, i_idx))
    right = diffnum.getitem(unit, (b_idx, j_idx))
    cosine = diffnum.sum_(left * right, axis=-1)
    return SslResult(value=diffnum.mean(cosine), n_pairs=int(b_idx.size), skipped=False)


@dataclass
class _Terms:
    recon: ArrayLike
    kl: ArrayLike
    ssl: ArrayLike
    total: ArrayLike
    lam: float


def _terms(
    model: LatentODE,
    params: ParamMap,
    y_batch: np.ndarray,
    grid: TimeGrid,
    lam: float,
    eps: np.ndarray,
    pair_rng: Optional[np.random.Generator],
    kl_weight: float,
    max_pairs: Optional[int],
) -> _Terms:
    y_batch = np.asarray(y_batch, dtype=np.float64)
    n_batch, n_t, dim = y_batch.shape
    if grid.n_points != n_t:
        raise ShapeError("objective grid", (grid.n_points,), (n_t,))
    lam = float(lam) if model.cfg.variant == "sinode" else 0.0

    fwd = model.forward(params, y_batch, grid, eps)
    n_samples = value_of(fwd.y_mean).shape[1] // n_batch

    # [B, T, D] -> [T, L*B, D], sample-major like eps
    target = np.tile(np.transpose(y_batch, (1, 0, 2)), (1, n_samples, 1))
    ll = recon_loglik(target, fwd.y_mean, model.observation_sigma(params), axis=(0, 2))
    ll_seq = diffnum.mean(diffnum.reshape(ll, (n_samples, n_batch)), axis=0)
    kl_seq = kl_diag_gaussian(fwd.posterior.mean, fwd.posterior.log_var)

    per_seq = value_of(ll_seq) - value_of(kl_seq)
    bad = np.flatnonzero(~np.isfinite(per_seq))
    if bad.size:
        raise TrainingError("non-finite ELBO term", sequence_index=int(bad[0]))

    recon = diffnum.sum_(ll_seq)
    kl = diffnum.sum_(kl_seq)
    total = recon - kl_weight * kl

    ssl: ArrayLike = 0.0
    if lam > 0.0:
        values = [
            ssl_loss(model.embedding_series(params, y_batch, pathway), max_pairs, pair_rng).value
            for pathway in model.active_pathways()
        ]
        if values:
            ssl = values[0] if len(values) == 1 else 0.5 * (values[0] + values[1])
        total = total + lam * ssl
    return _Terms(recon=recon, kl=kl, ssl=ssl, total=total, lam=lam)


def _breakdown(terms: _Terms) -> LossBreakdown:
    recon = float(value_of(terms.recon))
    kl = float(value_of(terms.kl))
    return LossBreakdown(
        elbo=recon - kl,
        recon_loglik=recon,
        kl=kl,
        ssl=float(value_of(terms.ssl)),
        total=float(value_of(terms.total)),
        lam=terms.lam,
    )


def objective_value(
    model: LatentODE,
    params: ModelParams,
    y_batch: np.ndarray,
    grid: TimeGrid,
    lam: float,
    eps: np.ndarray,
    pair_rng: Optional[np.random.Generator] = None,
    kl_weight: float = 1.0,
    max_pairs: Optional[int] = None,
) -> LossBreakdown:
    """Plain-mode evaluation (no tape)."""
    terms = _terms(model, params.as_dict(), y_batch, grid, lam, eps, pair_rng, kl_weight, max_pairs)
    return _breakdown(terms)


def total_objective(
    model: LatentODE,
    params: ModelParams,
    y_batch: np.ndarray,
    grid: TimeGrid,
    lam: float,
    eps: np.ndarray,
    pair_rng: Optional[np.random.Generator] = None,
    kl_weight: float = 1.0,
    max_pairs: Optional[int] = None,
) -> ObjectiveResult:
    """
    Batch objective and its gradient with respect to every parameter.

    The ELBO is summed over sequences; ``lam`` only takes effect for SINODE.
    """
    tape = Tape()
    nodes = tape.params(params.as_dict())
    terms = _terms(model, nodes, y_batch, grid, lam, eps, pair_rng, kl_weight, max_pairs)
    breakdown = _breakdown(terms)
    if not np.isfinite(breakdown.total):
        raise TrainingError("non-finite objective")
    grads = tape.backward(terms.total)
    return ObjectiveResult(breakdown=breakdown, gradient=params.flatten(grads))
