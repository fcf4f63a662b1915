from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import field_validator


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="SGDM_", env_file=".env", case_sensitive=False, extra="ignore")

    app_name: str = "Shape-Guided Editing Engine"
    environment: str = "development"
    debug: bool = False

    log_level: str = "INFO"

    # worker cap for parallel inference over independent images, 0 = auto
    threads: int = 0

    @field_validator("environment")
    @classmethod
    def validate_environment(cls, v):
        valid_environments = ["development", "staging", "production"]
        if v not in valid_environments:
            raise ValueError(f"Environment must be one of {valid_environments}")
        return v

    @field_validator("threads")
    @classmethod
    def validate_threads(cls, v):
        if v < 0:
            raise ValueError("threads must be >= 0")
        return v

    def worker_count(self) -> int:
        import os

        if self.threads > 0:
            return self.threads
        return max(1, os.cpu_count() or 1)


settings = Settings()
