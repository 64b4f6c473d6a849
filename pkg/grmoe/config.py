from typing import List

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Application
    app_name: str = "grmoe"
    app_version: str = "1.0.0"
    app_description: str = "Grassmannian mixture-of-experts routing toolkit"

    # Logging
    log_level: str = "INFO"
    log_json: bool = True

    # Experiments
    out_dir: str = "runs"
    threads: int = 1
    default_seeds: List[int] = Field(default_factory=lambda: list(range(20)))

    # Monte Carlo: max floats materialized per sphere-sampling chunk
    mc_chunk_floats: int = 2_000_000

    model_config = SettingsConfigDict(
        env_prefix="GRMOE_",
        env_file=".env.local",
        env_file_encoding="utf-8",
        extra="ignore",
        case_sensitive=False,
    )

    def model_post_init(self, __context) -> None:
        if self.threads < 1:
            self.threads = 1
        self.log_level = self.log_level.upper()


settings = Settings()
