from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field
import os
import logging
from pathlib import Path

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        # Look for .env file in project root (parent of src/)
        env_file=str(Path(__file__).parent.parent.parent / ".env"),
        case_sensitive=False,
        extra="ignore",
    )

    # Caps the augmentation worker pool (env: ULTRASEG_THREADS)
    ultraseg_threads: int = Field(default=1, ge=1)

    # Parent directory for run directories when a RunConfig names none
    runs_dir: str = "runs"

    # Logging
    log_level: str = "INFO"

    # Environment
    environment: str = "development"


settings = Settings()

_cpu_count = os.cpu_count() or 1
if settings.ultraseg_threads > _cpu_count:
    logger.warning(
        f"ULTRASEG_THREADS={settings.ultraseg_threads} exceeds the {_cpu_count} "
        f"available CPUs; augmentation workers will oversubscribe"
    )
