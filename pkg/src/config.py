import logging
import os
import random
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch
from dotenv import load_dotenv

load_dotenv()

CONFIG_DIR_ENV = "VMIL_CONFIG_DIR"
REPO_CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def default_config_dir() -> Path:
    """Directory used to resolve bare config names such as ``desk_scale``."""
    configured = os.getenv(CONFIG_DIR_ENV)
    if configured:
        return Path(configured)
    return REPO_CONFIG_DIR


def resolve_config_path(name_or_path: str) -> Path:
    """Return a config path, looking in the default config dir for bare names."""
    path = Path(name_or_path)
    if path.exists() or path.suffix or path.parent != Path("."):
        return path
    return default_config_dir() / f"{name_or_path}.json"


def setup_logging(level: str = "INFO") -> None:
    """Configure root logging once for CLI runs."""
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)


def set_global_seed(seed: int) -> None:
    """Seed python, numpy and torch global generators."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def set_precision(precision: str) -> torch.dtype:
    """Set the default torch float dtype ("float32" or "float64")."""
    dtypes = {"float32": torch.float32, "float64": torch.float64}
    if precision not in dtypes:
        raise ValueError(f"Precision must be one of {sorted(dtypes)}")
    torch.set_default_dtype(dtypes[precision])
    return dtypes[precision]


def set_threads(threads: Optional[int]) -> None:
    if threads:
        torch.set_num_threads(threads)


@contextmanager
def precision_scope(precision: str) -> Iterator[torch.dtype]:
    """Temporarily switch the default torch float dtype."""
    previous = torch.get_default_dtype()
    dtype = set_precision(precision)
    try:
        yield dtype
    finally:
        torch.set_default_dtype(previous)
