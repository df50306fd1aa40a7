"""
Application Configuration

Manages environment variables and solver/verdict defaults using Pydantic.
Settings are loaded from environment variables or a .env file.

Environment Variables (all prefixed with KWASS_):
- KWASS_THREADS: worker threads used when a pair of ensembles advances in parallel
- KWASS_MAX_EXACT_POINTS: capacity cap of the exact transport solver
- KWASS_EXACT_MEASURE_POINTS: above this size measurements use the entropic solver
- KWASS_C_D, KWASS_C0: calibration constants of the Loeper-type bounds
- KWASS_LOG_LEVEL, KWASS_DEBUG: logging
"""

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Library and CLI settings loaded from environment variables.

    Pydantic validates types and provides defaults. Command-line flags
    (--threads, --seed, --out) override the corresponding values per run.
    """

    APP_NAME: str = "kwass"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Parallelism
    # Only the two ensembles of a pair run concurrently; reductions keep a fixed order
    THREADS: int = 1

    # Transport solvers
    MAX_EXACT_POINTS: int = 5000
    EXACT_MEASURE_POINTS: int = 2000
    ENTROPIC_ETA: float = 1e-3
    ENTROPIC_TOL: float = 1e-9
    ENTROPIC_MAX_ITER: int = 20000
    NONLINEAR_TOL: float = 1e-12
    NONLINEAR_MAX_ITER: int = 50

    # Unquantified constants of the Vlasov-Poisson estimates
    C_D: float = 1.0
    C0: float = 0.05

    # Monte-Carlo allowance
    BOOTSTRAP_RESAMPLES: int = 200
    BOOTSTRAP_FACTOR: float = 3.0
    BOOTSTRAP_SUBSAMPLE: int = 256

    # Default output directory for scenario runs
    OUTPUT_DIR: str = "runs"

    model_config = SettingsConfigDict(
        env_prefix="KWASS_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


# Global settings instance
# Import this in other modules: from kwass.config import settings
settings = Settings()
