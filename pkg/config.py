# config.py
import logging
import os
from dotenv import load_dotenv

from core.exceptions import ConfigValidationError

load_dotenv()

_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


def validate_environment():
    """Reject malformed STEINFORGE_* variables before any compute starts."""
    bad = []
    if os.getenv("STEINFORGE_LOG_LEVEL", "INFO").upper() not in _LOG_LEVELS:
        bad.append("STEINFORGE_LOG_LEVEL")
    if not os.getenv("STEINFORGE_DEFAULT_SEED", "0").isdigit():
        bad.append("STEINFORGE_DEFAULT_SEED")
    if bad:
        raise ConfigValidationError(
            f"Invalid environment variables: {', '.join(bad)}", offending=bad)


class Settings:
    LOG_DIR = os.getenv("STEINFORGE_LOG_DIR", "workspace/logs")
    LOG_LEVEL = os.getenv("STEINFORGE_LOG_LEVEL", "INFO").upper()
    OUTPUT_ROOT = os.getenv("STEINFORGE_OUTPUT_ROOT", "workspace/runs")
    DEFAULT_SEED = os.getenv("STEINFORGE_DEFAULT_SEED", "0")

    @property
    def log_level(self) -> int:
        return getattr(logging, self.LOG_LEVEL, logging.INFO)

    @property
    def default_seed(self) -> int:
        return int(self.DEFAULT_SEED) if self.DEFAULT_SEED.isdigit() else 0


settings = Settings()
