"""
Experiment config file schema
"""
import json
from pathlib import Path
from typing import Any, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from inode_lab.core.config import settings
from inode_lab.core.exceptions import ConfigError, MissingArtifactError, config_error_from_validation
from inode_lab.schemas.dataset import DatasetSection
from inode_lab.schemas.model import VariantConfig
from inode_lab.schemas.training import EvalConfig, TrainConfig


class AblationSection(BaseModel):
    """Optional overrides for ``ablate``; defaults are the grids in DEFAULT_GRIDS."""
    model_config = ConfigDict(extra="forbid")

    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3], min_length=1)
    values: Optional[List[Any]] = Field(None, description="Replaces the default grid of the swept axis")


class ExperimentConfig(BaseModel):
    """One JSON file per experiment; unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")

    dataset: DatasetSection
    model: VariantConfig = Field(default_factory=VariantConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    ablation: AblationSection = Field(default_factory=AblationSection)
    output_dir: str = Field(default_factory=lambda: settings.DEFAULT_OUTPUT_DIR)

    @classmethod
    def load(cls, path: Path | str) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise MissingArtifactError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON ({exc.msg}, line {exc.lineno})") from exc
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise config_error_from_validation(exc) from exc

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override every seed (data generation, training, evaluation)."""
        dataset = self.dataset
        if dataset.gen is not None:
            dataset = dataset.model_copy(update={"gen": dataset.gen.model_copy(update={"seed": seed})})
        return self.model_copy(
            update={
                "dataset": dataset,
                "train": self.train.model_copy(update={"seed": seed}),
                "eval": self.eval.model_copy(update={"seed": seed}),
            }
        )

    def resolved(self) -> dict:
        return self.model_dump(mode="json")
