import os

from .errors import ConfigurationError

# --- Output Configuration ---
OUTPUT_ROOT = os.getenv("CISS_LAB_OUT", "./out")

# --- Logging Configuration ---
LOG_LEVEL_STR = os.getenv("LOG_LEVEL", "INFO").upper()

# --- Ablation Execution ---
_workers_raw = os.getenv("CISS_LAB_WORKERS", "1")


# --- Validation ---
def _parse_workers(raw):
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"Invalid CISS_LAB_WORKERS: {raw}") from None
    if value < 1:
        raise ConfigurationError(f"Invalid CISS_LAB_WORKERS: {raw}")
    return value


WORKERS = _parse_workers(_workers_raw)

if LOG_LEVEL_STR not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
    raise ConfigurationError(f"Invalid LOG_LEVEL: {LOG_LEVEL_STR}")

if not OUTPUT_ROOT.strip():
    raise ConfigurationError("Empty CISS_LAB_OUT")


def log_initial_settings():
    """Log initial configuration settings for debugging."""
    from .structured_logger import get_logger

    get_logger(__name__).info(
        "Configuration loaded",
        extra={"output_root": OUTPUT_ROOT, "log_level": LOG_LEVEL_STR, "workers": WORKERS},
    )
