"""
Application configuration using Pydantic Settings
"""

from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings loaded from environment variables (and .env)"""

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Application
    APP_NAME: str = "In-Context Symbol Estimation"
    APP_VERSION: str = "1.0.0"
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = False

    # Experiments
    ICE_THREADS: int = Field(1, ge=1, description="Worker threads for Monte Carlo trials")
    DEFAULT_SEED: int = Field(0, ge=0, lt=2**64)
    N_STAT: int = Field(10000, ge=1, description="Default trials per context length")
    OUTPUT_DIR: Path = Path("results")

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def parse_log_level(cls, v):
        if isinstance(v, str):
            v = v.strip().upper()
            if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
                raise ValueError(f"Unknown log level {v}")
        return v


# Global settings instance
settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get application settings (singleton pattern)"""
    global settings
    if settings is None:
        settings = Settings()
    return settings


def init_settings() -> Settings:
    """Initialize settings (called at startup)"""
    global settings
    settings = Settings()
    return settings


def reset_settings() -> None:
    """Drop the cached instance so the next get_settings() re-reads the environment"""
    global settings
    settings = None
