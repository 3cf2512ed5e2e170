from pathlib import Path

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv(Path.cwd() / ".env")


class Settings(BaseSettings):
    wrsn_out: Path = Path("runs")
    """Root directory for run artifacts, overridden by ``WRSN_OUT``."""

    wrsn_workers: int = 1
    wrsn_chargers: int = 3

    model_config = SettingsConfigDict(case_sensitive=False, frozen=True, env_file=".env", extra="allow")
