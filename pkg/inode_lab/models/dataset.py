"""
In-memory benchmark dataset
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from inode_lab.core.exceptions import ContractError
from inode_lab.schemas.solver import TimeGrid


@dataclass
class Dataset:
    """
    N_s sequences of D-dimensional observations on a uniform grid.

    ``true_params`` keeps the per-sequence generator parameters (one row per sequence,
    columns named by ``param_names``) for diagnostics only; models never see them.
    """

    name: str
    observations: np.ndarray
    grid: TimeGrid
    true_params: np.ndarray
    param_names: Tuple[str, ...]
    noise_sigma: float
    split: str
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.true_params = np.asarray(self.true_params, dtype=np.float64)
        if self.observations.ndim != 3 or min(self.observations.shape) < 1:
            raise ContractError(f"observations must be [N_s, N_t, D], got {self.observations.shape}")
        if not np.all(np.isfinite(self.observations)):
            raise ContractError("observations contain non-finite values")
        if self.true_params.shape[0] != self.n_seq:
            raise ContractError(
                f"true_params has {self.true_params.shape[0]} rows for {self.n_seq} sequences"
            )
        if self.grid.n_points != self.n_t:
            raise ContractError(f"grid has {self.grid.n_points} points for N_t={self.n_t}")

    @property
    def n_seq(self) -> int:
        return int(self.observations.shape[0])

    @property
    def n_t(self) -> int:
        return int(self.observations.shape[1])

    @property
    def dim(self) -> int:
        return int(self.observations.shape[2])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            name=self.name,
            observations=self.observations[idx],
            grid=self.grid,
            true_params=self.true_params[idx],
            param_names=self.param_names,
            noise_sigma=self.noise_sigma,
            split=self.split,
            seed=self.seed,
            config=dict(self.config),
        )

    def truncated(self, n_t: int) -> "Dataset":
        """First ``n_t`` frames of every sequence."""
        if not 2 <= n_t <= self.n_t:
            raise ContractError(f"cannot truncate N_t={self.n_t} to {n_t}")
        return Dataset(
            name=self.name,
            observations=self.observations[:, :n_t],
            grid=self.grid.with_points(n_t),
            true_params=self.true_params,
            param_names=self.param_names,
            noise_sigma=self.noise_sigma,
            split=self.split,
            seed=self.seed,
            config=dict(self.config),
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.name == other.name
            and self.split == other.split
            and self.seed == other.seed
            and self.noise_sigma == other.noise_sigma
            and self.param_names == other.param_names
            and self.grid == other.grid
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.true_params, other.true_params)
        )
