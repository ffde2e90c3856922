"""
Runtime configuration for the model uncertainty toolkit
Reads defaults from the environment (optionally a .env file at the project root)
"""

import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

# Explicitly load .env from project root
_env_file = Path(__file__).resolve().parent.parent / ".env"
_env_loaded = load_dotenv(dotenv_path=_env_file)

logger = logging.getLogger(__name__)
logger.debug(".env file %s loaded: %s", _env_file, _env_loaded)


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name, "")
    if raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning("Ignoring non-integer %s=%r, using %d", name, raw, default)
        return default


DEFAULT_SEED = _env_int("BNUQ_SEED", 20240607)
MC_SAMPLES = _env_int("BNUQ_MC_SAMPLES", 200_000)
OUTER_SAMPLES = _env_int("BNUQ_OUTER_SAMPLES", 2000)
INNER_SAMPLES = _env_int("BNUQ_INNER_SAMPLES", 20_000)
F_SAMPLES = _env_int("BNUQ_F_SAMPLES", 256)
F_GRID = _env_int("BNUQ_F_GRID", 17)
ESS_THRESHOLD = _env_int("BNUQ_ESS_THRESHOLD", 100)
THREADS = _env_int("BNUQ_THREADS", 1)
LOG_LEVEL = os.environ.get("BNUQ_LOG_LEVEL", "WARNING").upper()
OUTPUT_DIR = os.environ.get("BNUQ_OUTPUT_DIR", "output")

# Row count of one sampling block; blocks get their own spawned seed
SAMPLE_BLOCK_ROWS = 65536


@dataclass(frozen=True)
class MonteCarloConfig:
    """Sample sizes, seed and parallelism shared by all Monte-Carlo estimators"""

    samples: int = MC_SAMPLES
    seed: int = DEFAULT_SEED
    outer: int = OUTER_SAMPLES
    inner: int = INNER_SAMPLES
    f_samples: int = F_SAMPLES
    f_grid: int = F_GRID
    ess_threshold: int = ESS_THRESHOLD
    threads: int = THREADS

    def __post_init__(self):
        for field in ("samples", "outer", "inner", "f_samples", "f_grid", "threads"):
            if getattr(self, field) < 1:
                raise ValueError(f"MonteCarloConfig.{field} must be >= 1")

    @classmethod
    def from_env(cls) -> "MonteCarloConfig":
        return cls()

    def replace(self, **overrides) -> "MonteCarloConfig":
        """Return a copy with the non-None overrides applied"""
        kept = {key: value for key, value in overrides.items() if value is not None}
        return dataclasses.replace(self, **kept)
