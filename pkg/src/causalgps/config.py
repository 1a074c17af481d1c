from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Logging
    log_level: str = "INFO"
    log_file: str | None = None

    # Execution
    nthread: int = 1
    seed: int = 249

    # Artifacts
    output_dir: str = "."

    model_config = SettingsConfigDict(env_file=".env", env_prefix="CAUSALGPS_", case_sensitive=False)


settings = Settings()
