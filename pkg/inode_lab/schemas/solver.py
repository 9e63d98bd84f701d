"""
Time grid and ODE solver schemas
"""
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from inode_lab.core.config import settings

SolverKind = Literal["euler", "rk4", "dopri5"]


class TimeGrid(BaseModel):
    """Uniform reporting grid: points are t0 + i*dt."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    t0: float = Field(0.0, description="Start time (seconds)")
    dt: float = Field(..., gt=0, description="Spacing between grid points (seconds)")
    n_points: int = Field(..., ge=2, description="Number of grid points")

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_points, dtype=np.float64) * self.dt

    @property
    def t_end(self) -> float:
        return self.t0 + (self.n_points - 1) * self.dt

    @property
    def span(self) -> float:
        return (self.n_points - 1) * self.dt

    def with_points(self, n_points: int) -> "TimeGrid":
        return TimeGrid(t0=self.t0, dt=self.dt, n_points=n_points)


class SolverSpec(BaseModel):
    """Which integrator to use and how."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: SolverKind = Field("euler", description="euler | rk4 | dopri5")
    dt: Optional[float] = Field(
        None, gt=0, description="Fixed step; None means one step per grid interval"
    )
    rtol: float = Field(default_factory=lambda: settings.DOPRI5_RTOL)
    atol: float = Field(default_factory=lambda: settings.DOPRI5_ATOL)
    max_steps: int = Field(default_factory=lambda: settings.DOPRI5_MAX_STEPS, ge=1)

    @model_validator(mode="after")
    def _check_tolerances(self) -> "SolverSpec":
        if self.kind == "dopri5" and (self.rtol <= 0 or self.atol <= 0):
            raise ValueError("dopri5 requires rtol > 0 and atol > 0")
        return self
