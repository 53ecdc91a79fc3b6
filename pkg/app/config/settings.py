"""
Environment-based settings for the lag-effects toolkit.

Loaded from environment variables or a .env file at project root.
Override any value by setting the corresponding environment variable.

Usage:
    from app.config.settings import settings

    run_study(config, threads=settings.threads)
"""

from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings loaded from environment variables or .env file."""

    threads: int = Field(
        default=1,
        ge=1,
        alias="LAG_EFFECTS_THREADS",
        description="Default worker count for replication studies.",
    )

    log_level: str = Field(
        default="INFO",
        alias="LOG_LEVEL",
        description="Root logging level: DEBUG | INFO | WARNING | ERROR.",
    )

    environment: str = Field(
        default="local",
        alias="ENVIRONMENT",
        description="Deployment environment: local | staging | production.",
    )

    debug: bool = Field(
        default=False,
        alias="DEBUG",
        description="Enable debug mode (IRLS traces, stack traces on CLI errors).",
    )

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "populate_by_name": True,
    }

    @property
    def is_production(self) -> bool:
        """Return True when running in production."""
        return self.environment.lower() == "production"

    @property
    def effective_log_level(self) -> str:
        """Logging level after applying the debug switch."""
        return "DEBUG" if self.debug else self.log_level.upper()


settings = Settings()
