import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError

# Load environment variables
load_dotenv()

# Tool Configuration
TOOL_NAME = "norabench"
TOOL_VERSION = "0.1.0"
SCHEMA_VERSION = "1.0"

# Logging Configuration
DEBUG = os.getenv("NORABENCH_DEBUG", "False").lower() == "true"
LOG_LEVEL = os.getenv("NORABENCH_LOG_LEVEL", "DEBUG" if DEBUG else "INFO").upper()

# Path Configuration
PACKAGE_DIR = Path(__file__).resolve().parent
DATA_DIR = PACKAGE_DIR / "data"
CONFIG_DIR = Path(os.getenv("NORABENCH_CONFIG_DIR", "config"))
DEFAULT_WORLD = Path(os.getenv("NORABENCH_WORLD", str(DATA_DIR / "nora_world.lp")))
MINI_WORLD = DATA_DIR / "nora_mini.lp"
GENERATION_CONFIG_NAME = "generation.env"

# Engine Configuration
REFINEMENT_CAP = int(os.getenv("NORABENCH_REFINEMENT_CAP", "4096"))
PROOF_SEARCH_NODE_LIMIT = int(os.getenv("NORABENCH_PROOF_SEARCH_NODE_LIMIT", "250000"))

# Dataset Configuration
BALANCE_TOLERANCE = float(os.getenv("NORABENCH_BALANCE_TOLERANCE", "1.25"))
BALANCE_MAX_PASSES = int(os.getenv("NORABENCH_BALANCE_MAX_PASSES", "20"))
IN_DIST_FRACTION = float(os.getenv("NORABENCH_IN_DIST_FRACTION", "0.1"))

# Place predicates: second argument is a place, first a person
PLACE_PREDICATES = tuple(
    p.strip()
    for p in os.getenv("NORABENCH_PLACE_PREDICATES", "living_in,not_living_in").split(",")
    if p.strip()
)

# Generation Configuration
EXCLUDED_PREDICATES = tuple(
    p.strip()
    for p in os.getenv("NORABENCH_EXCLUDED_PREDICATES", "not_living_in").split(",")
    if p.strip()
)
GENDER_FACT = os.getenv("NORABENCH_GENDER_FACT", "is_gender")


def init_logging(debug: Optional[bool] = None):
    """Configure root logging for command-line runs."""
    level_name = "DEBUG" if (debug if debug is not None else DEBUG) else LOG_LEVEL
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise ConfigError(f"Unsupported log level: {level_name}")

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    return level


def default_generation_config_path() -> Optional[Path]:
    """Return `<CONFIG_DIR>/generation.env` when it exists."""
    path = CONFIG_DIR / GENERATION_CONFIG_NAME
    return path if path.is_file() else None


def read_key_values(path: Path) -> dict:
    """
    Read a plain-text KEY=value file.

    Args:
        path: Config file path

    Returns:
        Dictionary with lower-cased keys and raw string values
    """
    if not Path(path).is_file():
        raise ConfigError(f"Config file not found: {path}")
    values = dotenv_values(path)
    return {key.lower(): value for key, value in values.items() if value is not None}
