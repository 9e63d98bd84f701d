"""
Metric table schemas
"""
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field

METRIC_COLUMNS: Tuple[str, ...] = ("variant", "seed", "horizon_label", "horizon_len", "mse", "mse_std")
AGGREGATE_COLUMNS: Tuple[str, ...] = (
    "setting", "variant", "horizon_label", "horizon_len", "n_seeds", "mse_mean", "mse_std",
)


class MetricRow(BaseModel):
    """Test MSE of one checkpoint at one horizon; std is across sequences."""
    model_config = ConfigDict(frozen=True)

    variant: str
    seed: int
    horizon_label: str
    horizon_len: int = Field(..., ge=1)
    mse: float = Field(..., ge=0)
    mse_std: float = Field(..., ge=0)

    def values(self) -> list:
        return [getattr(self, c) for c in METRIC_COLUMNS]


class MetricTable(BaseModel):
    rows: List[MetricRow] = Field(default_factory=list)

    def extend(self, other: "MetricTable") -> "MetricTable":
        return MetricTable(rows=[*self.rows, *other.rows])

    def lookup(self, horizon_label: str) -> List[MetricRow]:
        return [r for r in self.rows if r.horizon_label == horizon_label]


class AggregateRow(BaseModel):
    """Mean and std of per-seed MSE for one setting; std is across seeds."""
    model_config = ConfigDict(frozen=True)

    setting: str = ""
    variant: str
    horizon_label: str
    horizon_len: int
    n_seeds: int = Field(..., ge=1)
    mse_mean: float
    mse_std: float = Field(..., ge=0)

    def values(self) -> list:
        return [getattr(self, c) for c in AGGREGATE_COLUMNS]
