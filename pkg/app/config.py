from functools import lru_cache

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# ------------------------------
# Load environment variables
# ------------------------------
load_dotenv()  # Reads from .env automatically


class Settings(BaseSettings):
    """Process-wide defaults. Every field can be overridden with a PHASEFIELD_* variable."""

    model_config = SettingsConfigDict(env_prefix="PHASEFIELD_", env_file=".env", extra="ignore")

    output_dir: str = "./runs"
    database_url: str = "sqlite:///./phasefield_runs.db"
    database_echo: bool = False
    log_level: str = "INFO"
    cors_origins: str = "http://localhost:3000,http://localhost:8000"

    # Numerical defaults copied into every RunConfig that does not set them
    tol_newton: float = 1e-10
    max_newton_iters: int = 50
    ledger_tol: float = 1e-8
    mean_tol: float = 1e-10
    max_retries: int = 4
    fft_workers: int = 1

    @property
    def allowed_origins(self) -> list[str]:
        return [o.strip() for o in self.cors_origins.split(",") if o.strip()]


@lru_cache
def get_settings() -> Settings:
    return Settings()
