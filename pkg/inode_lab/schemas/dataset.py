"""
Dataset generation schemas
"""
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

DatasetKind = Literal["sinusoid", "sinusoid_content", "lotka_volterra"]
Split = Literal["train", "val", "test"]
SPLITS: tuple[str, ...] = ("train", "val", "test")


class GenConfig(BaseModel):
    """How many sequences to draw, on which grid, with how much noise."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_train: int = Field(..., ge=1)
    n_val: int = Field(..., ge=1)
    n_test: int = Field(..., ge=1)
    n_t: int = Field(..., ge=2, description="Training sequence length")
    dt: float = Field(..., gt=0, description="Time between observations (seconds)")
    sigma: float = Field(..., ge=0, description="Observation noise standard deviation")
    seed: int = Field(..., ge=0)
    t0: float = 0.0
    test_horizon_factor: int = Field(
        3, ge=1, description="Test sequences are this many times longer than training ones"
    )

    def count(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]

    def length(self, split: str) -> int:
        return self.n_t * self.test_horizon_factor if split == "test" else self.n_t


# Default sizes per dataset kind; the seed must always be supplied by the caller.
PRESETS: Dict[str, Dict[str, Any]] = {
    "sinusoid": {"n_train": 80, "n_val": 25, "n_test": 25, "n_t": 50, "dt": 0.1, "sigma": 0.1},
    "sinusoid_content": {"n_train": 80, "n_val": 25, "n_test": 25, "n_t": 50, "dt": 0.1, "sigma": 0.1},
    "lotka_volterra": {"n_train": 500, "n_val": 100, "n_test": 100, "n_t": 200, "dt": 0.1, "sigma": 0.1},
}


def preset(kind: str, seed: int, **overrides: Any) -> GenConfig:
    values = dict(PRESETS[kind])
    values.update(overrides)
    return GenConfig(seed=seed, **values)


class DatasetSection(BaseModel):
    """Experiment-config section: generate (kind + gen) or load from a directory (path)."""
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind
    gen: Optional[GenConfig] = None
    path: Optional[str] = Field(None, description="Directory holding manifest.json and split files")

    @model_validator(mode="before")
    @classmethod
    def _fill_preset(cls, data: Any) -> Any:
        if isinstance(data, dict) and isinstance(data.get("gen"), dict) and data.get("kind") in PRESETS:
            merged = dict(PRESETS[data["kind"]])
            merged.update(data["gen"])
            data = {**data, "gen": merged}
        return data

    @model_validator(mode="after")
    def _gen_or_path(self) -> "DatasetSection":
        if self.gen is None and self.path is None:
            raise ValueError("either 'gen' or 'path' must be given")
        return self


class DatasetManifest(BaseModel):
    """Written next to the split files; records everything needed to regenerate them."""
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind
    gen: GenConfig
    files: Dict[str, str]
    seed_streams: Dict[str, list[int]]
    train_n_t: int
    t_in: Optional[int] = None
    t_inv: Optional[int] = None
