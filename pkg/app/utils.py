"""
Utility functions: atomic file writes, seeding, dtype helpers, output provenance.
"""
import json
import os
import random
import tempfile
from typing import Any, Dict, Optional, Sequence

import numpy as np
import torch

from app.config import Config
from app.logger import get_logger

logger = get_logger(__name__)

# ============================================================================
# NUMERICS
# ============================================================================

def torch_dtype(name: str = None) -> torch.dtype:
    """Map the configured dtype name to a torch dtype."""
    name = (name or Config.DTYPE).lower()
    if name in ("float64", "double", "f64"):
        return torch.float64
    if name in ("float32", "float", "f32"):
        return torch.float32
    raise ValueError(f"Unsupported dtype '{name}' (use float64 or float32)")


def set_determinism(seed: int, threads: int = None):
    """
    Seed every RNG the toolkit touches and pin torch to deterministic kernels.
    Single-threaded by default so reductions keep a fixed order.
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.set_num_threads(threads or Config.NUM_THREADS)
    torch.use_deterministic_algorithms(True, warn_only=True)


# ============================================================================
# FILE HELPERS
# ============================================================================

def atomic_write_text(path: str, text: str):
    """Write-temp-then-rename so readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.debug(f"Wrote {path}")


def dumps_stable(payload: Any) -> str:
    """Deterministic JSON (sorted keys, fixed indentation)."""
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"


def atomic_write_json(path: str, payload: Any):
    atomic_write_text(path, dumps_stable(payload))


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ============================================================================
# PROVENANCE
# ============================================================================

def provenance(config: Any, seeds: Sequence[Optional[int]]) -> Dict[str, Any]:
    """Tool, version, seed list and config echo carried by every output file."""
    return {
        "tool": Config.TOOL_NAME,
        "version": Config.TOOL_VERSION,
        "seeds": [None if s is None else int(s) for s in seeds],
        "config": config,
    }


def provenance_header(config: Any, seeds: Sequence[Optional[int]], prefix: str = "# ") -> str:
    """
    Two comment lines for CSV outputs:
        # tool=hei-toolkit,version=1.0.0,seeds=[0,1,2]
        # config={...one-line JSON...}
    """
    meta = provenance(config, seeds)
    seed_list = json.dumps(meta["seeds"], separators=(",", ":"))
    echo = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return (f"{prefix}tool={meta['tool']},version={meta['version']},seeds={seed_list}\n"
            f"{prefix}config={echo}\n")


def read_provenance(path: str) -> Dict[str, Any]:
    """Parse the leading '#' lines written by provenance_header."""
    meta: Dict[str, Any] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if body.startswith("config="):
                meta["config"] = json.loads(body[len("config="):])
                continue
            # seeds go last so the commas inside its list survive the split
            for item in body.split(",", 2):
                key, _, value = item.partition("=")
                meta[key] = value
    if "seeds" in meta:
        meta["seeds"] = json.loads(meta["seeds"])
    return meta
