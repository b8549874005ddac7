from typing import List
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Operational configuration loaded from environment variables / .env.

    Numeric behaviour (tolerances, seeds, sample counts) is not configured
    here; it comes from command flags and experiment config files.
    """
    model_config = SettingsConfigDict(
        env_file='.env',
        env_file_encoding='utf-8',
        case_sensitive=True,
        extra='ignore'
    )

    # Execution
    THREADS: int = Field(1, description="Worker threads for experiment levels and identity trials")

    # Logging
    LOG_LEVEL: str = Field("INFO", description="Logging level")
    LOG_FILE: str = Field("logs/minkowski_tensors.log", description="Path to application log file")
    RESULT_LOG_FILE: str = Field("logs/check_results.jsonl", description="Path to JSONL check/experiment log")

    # Output
    REPORT_DIR: str = Field("reports", description="Default directory for CSV reports and run summaries")

    @property
    def log_level_value(self) -> int:
        import logging
        return getattr(logging, self.LOG_LEVEL.upper(), logging.INFO)

    def validate_settings(self) -> List[str]:
        """Return a list of human-readable configuration problems."""
        problems = []

        if self.THREADS < 1:
            problems.append("THREADS (must be >= 1)")

        if self.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            problems.append(f"LOG_LEVEL ('{self.LOG_LEVEL}' is not a logging level)")

        for field in ("LOG_FILE", "RESULT_LOG_FILE", "REPORT_DIR"):
            value = getattr(self, field, None)
            if not value or not str(value).strip():
                problems.append(f"{field} (empty)")

        return problems


# Global settings instance
settings = Settings()
