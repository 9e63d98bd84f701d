"""
Runtime configuration management
"""
import os
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings loaded from environment variables"""

    # Project Information
    PROJECT_NAME: str = "inode-lab"
    VERSION: str = "0.1.0"
    DESCRIPTION: str = "Invariant latent neural ODEs: data generation, training and evaluation"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"
    LOG_TO_FILE: bool = True

    # Intra-run parallelism cap (BLAS/OpenMP threads). Unset means "library default".
    INODE_LAB_THREADS: Optional[int] = Field(default=None, ge=1)

    # Outputs
    DEFAULT_OUTPUT_DIR: str = "runs"

    # On-disk container versions
    DATASET_FORMAT_VERSION: int = 1
    CHECKPOINT_FORMAT_VERSION: int = 1

    # Numerics defaults
    SSL_MAX_PAIRS: int = 256
    DOPRI5_RTOL: float = 1e-5
    DOPRI5_ATOL: float = 1e-6
    DOPRI5_MAX_STEPS: int = 100_000

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()


_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def apply_thread_cap() -> None:
    """Export INODE_LAB_THREADS to the BLAS/OpenMP variables; only effective before numpy loads."""
    if settings.INODE_LAB_THREADS is None:
        return
    for var in _THREAD_VARS:
        os.environ[var] = str(settings.INODE_LAB_THREADS)
