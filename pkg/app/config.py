"""Application configuration."""

from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings."""

    # API Settings
    API_TITLE: str = "Triangle Interpolation Constants API"
    API_VERSION: str = "1.0.0"
    API_DESCRIPTION: str = (
        "Closed-form bounds, discrete estimates and verified certificates "
        "for interpolation error constants on triangles"
    )

    # Output Settings
    OUTPUT_DIR: Path = Path("results")
    CHECKPOINT_DIR: Path = Path("results/checkpoints")

    # Discretization Settings
    DEFAULT_N: int = 20
    DEFAULT_DEGREE: int = 10

    # Exact arithmetic
    MAX_DENOMINATOR: int = 10**12
    SEED: int = 20240611
    MP_DPS: int = 60

    # Sweeps
    N_JOBS: int = 1
    POINT_TIMEOUT_SECONDS: int = 1800
    SWEEP_MARGIN: float = 1.0

    # Logging
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8")


settings = Settings()


def ensure_directories() -> None:
    """Create the output and checkpoint directories if missing."""
    for directory in (settings.OUTPUT_DIR, settings.CHECKPOINT_DIR):
        directory.mkdir(parents=True, exist_ok=True)
