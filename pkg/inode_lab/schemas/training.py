"""
Training and evaluation schemas
"""
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from inode_lab.core.config import settings


class TrainConfig(BaseModel):
    """Adam + mini-batch loop settings."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(0.002, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)
    batch_size: int = Field(16, ge=1)
    max_epochs: int = Field(300, ge=1)
    max_steps: Optional[int] = Field(None, ge=1, description="Hard cap on optimizer steps")
    lam: float = Field(1.0, ge=0, description="SSL weight (only SINODE applies it)")
    seed: int = Field(0, ge=0)
    kl_warmup_epochs: int = Field(0, ge=0)
    patience: int = Field(30, ge=1)
    ssl_max_pairs: int = Field(default_factory=lambda: settings.SSL_MAX_PAIRS, ge=1)

    @field_validator("betas")
    @classmethod
    def _betas_in_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in v):
            raise ValueError("betas must lie in [0, 1)")
        return v


class EvalConfig(BaseModel):
    """Evaluation protocol settings."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    horizons: List[str] = Field(default_factory=lambda: ["tin", "nt", "3nt"])
    mc_samples: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)
    similarity_n_seq: int = Field(25, ge=1)
    similarity_n_t: int = Field(16, ge=1)
    pca_components: int = Field(2, ge=1)
