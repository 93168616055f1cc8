"""
Centralized configuration management using Pydantic Settings.
All settings can be overridden via environment variables prefixed with KVW_.
"""
from pathlib import Path
from typing import List

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide defaults for the unlearning engine and its harness."""

    model_config = SettingsConfigDict(
        env_prefix="KVW_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    log_level: str = Field(default="INFO")

    # Reproducibility
    default_seed: int = Field(default=0)

    # Output locations (KVW_REPORT_DIR overrides the report directory)
    report_dir: str = Field(default="./data/reports")

    # Weakening defaults
    eps: float = Field(default=1e-8, gt=0)
    batch_size: int = Field(default=1, ge=1)

    # Selection protocol
    retain_floor: float = Field(default=0.95, gt=0, le=1)
    bucket_count: int = Field(default=8, ge=1)
    gamma_grid: List[float] = Field(
        default=[0.0, 0.03, 0.1, 0.2, 0.3, 0.5, 0.7, 1.5, 3.0, 5.0]
    )

    # Execution
    workers: int = Field(default=1, ge=1)

    @property
    def report_path(self) -> Path:
        """Get report directory as Path object."""
        path = Path(self.report_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path


# Global settings instance
settings = Settings()
