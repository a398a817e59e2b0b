"""
Configuration management for the HEI toolkit.
Centralized process settings and the documented hyper-parameter grids.
"""
import os
from typing import List, Tuple
from dotenv import load_dotenv

load_dotenv()

# Explicit exports for wildcard imports
__all__ = [
    'Config',
    'LOG_LEVEL',
    'LOG_FILE',
    'OUTPUT_DIR',
    'DTYPE',
    'NUM_THREADS',
    'DEBUG_FINITE',
    'LAMBDA_GRID',
    'LR_GRID',
    'WEIGHT_DECAY_GRID',
    'RHO_LR_GRID',
    'RHO_HIDDEN_GRID',
    'K_RANGE',
    'SIMRANK_DECAY',
    'HOMOPHILY_BINS',
    'TOOL_VERSION',
]


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Config:
    # ============================================================================
    # TOOL
    # ============================================================================
    TOOL_NAME = "hei-toolkit"
    TOOL_VERSION = "1.0.0"

    # ============================================================================
    # NUMERICS
    # ============================================================================
    DTYPE = os.getenv("HEI_DTYPE", "float64")  # float64 | float32
    NUM_THREADS = int(os.getenv("HEI_NUM_THREADS", "1"))
    DEBUG_FINITE = _env_flag("HEI_DEBUG_FINITE", "false")

    # ============================================================================
    # OUTPUT
    # ============================================================================
    OUTPUT_DIR = os.getenv("HEI_OUTPUT_DIR", "results")
    PROGRESS = _env_flag("HEI_PROGRESS", "true")

    # ============================================================================
    # HYPER-PARAMETER GRIDS (legal documented ranges)
    # ============================================================================
    LAMBDA_GRID: List[float] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]
    LR_GRID: List[float] = [1e-2, 5e-3, 1e-3, 5e-4, 1e-4]
    WEIGHT_DECAY_GRID: List[float] = [1e-2, 5e-3, 1e-3]
    RHO_LR_GRID: List[float] = [5e-3, 1e-3, 5e-4, 1e-4]
    RHO_HIDDEN_GRID: List[int] = [16, 32, 64]
    K_RANGE: Tuple[int, int] = (2, 12)
    K_SWEEP: List[int] = [2, 4, 6, 8, 10, 12]

    # ============================================================================
    # DEFAULTS
    # ============================================================================
    SIMRANK_DECAY = 0.6
    DEFAULT_K = 6
    DEFAULT_WARMUP_EPOCHS = 50
    DEFAULT_EPOCHS = 200
    DEFAULT_HIDDEN = 64
    DEFAULT_LAYERS = 2
    DEFAULT_SGC_HOPS = 2
    DEFAULT_RHO_HIDDEN = 32
    DEFAULT_DROP_RATE_MAX = 0.3
    DEFAULT_TRIALS = 10
    LARGE_GRAPH_TRIALS = 5
    LARGE_GRAPH_NODES = 100_000

    # Node-homophily groups used by the train/test shift statistic
    HOMOPHILY_BINS: List[float] = [0.0, 0.1, 0.2, 0.3, 1.0]

    # ============================================================================
    # LOGGING
    # ============================================================================
    LOG_LEVEL = os.getenv("HEI_LOG_LEVEL", "INFO")
    LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    LOG_FILE = os.getenv("HEI_LOG_FILE", "logs/hei.log")


# Module-level exports for backward compatibility
TOOL_VERSION = Config.TOOL_VERSION
DTYPE = Config.DTYPE
NUM_THREADS = Config.NUM_THREADS
DEBUG_FINITE = Config.DEBUG_FINITE
OUTPUT_DIR = Config.OUTPUT_DIR

# Grids
LAMBDA_GRID = Config.LAMBDA_GRID
LR_GRID = Config.LR_GRID
WEIGHT_DECAY_GRID = Config.WEIGHT_DECAY_GRID
RHO_LR_GRID = Config.RHO_LR_GRID
RHO_HIDDEN_GRID = Config.RHO_HIDDEN_GRID
K_RANGE = Config.K_RANGE

# Similarity / reports
SIMRANK_DECAY = Config.SIMRANK_DECAY
HOMOPHILY_BINS = Config.HOMOPHILY_BINS

# Logging
LOG_LEVEL = Config.LOG_LEVEL
LOG_FILE = Config.LOG_FILE
