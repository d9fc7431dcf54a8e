"""Configuration management for VolMate."""

from pathlib import Path
from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables."""

    # Application
    APP_NAME: str = "VolMate"
    APP_VERSION: str = "0.1.0"
    CHECKPOINT_FORMAT_VERSION: int = 1

    # Paths
    BASE_DIR: Path = Path(__file__).parent.parent
    DATA_DIR: str = "data/corpus"
    LOG_FILE: str = "data/logs/volmate.log"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_TO_FILE: bool = False

    # Determinism
    THREADS: int = 1
    DEFAULT_SEED: int = 0

    # Optional path to a JSON run config used when --config is omitted
    RUN_CONFIG: Optional[str] = None

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore"
    )

    def get_data_dir(self) -> Path:
        """Get absolute corpus directory path."""
        return self.BASE_DIR / self.DATA_DIR

    def get_log_file(self) -> Path:
        """Get absolute log file path."""
        return self.BASE_DIR / self.LOG_FILE


# Global settings instance
settings = Settings()
