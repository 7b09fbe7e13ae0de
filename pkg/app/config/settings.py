"""
Process-level settings for the lab.
Using python-dotenv so your .env loads automatically.
"""
import os
from typing import Dict, Any
from dotenv import load_dotenv  # type: ignore

load_dotenv()


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ValueError(f"{name} must be an integer, got {raw!r}") from e


def get_config() -> Dict[str, Any]:
    """
    Returns settings loaded from environment variables.
    CLI flags take precedence over every value here.
    """
    return {
        "log_level": os.getenv("FEDLEAK_LOG_LEVEL", "INFO").upper(),
        "workers": _int_env("FEDLEAK_WORKERS", os.cpu_count() or 1),
        "output_dir": os.getenv("FEDLEAK_OUTPUT_DIR", "runs"),
        "seed": _int_env("FEDLEAK_SEED", 0),
    }
