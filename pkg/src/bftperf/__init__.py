"""Consensus-time simulation and closed-form models for IBFT and HotStuff."""

from .config import SimConfig
from .engine import HAVE_KERNEL, RunResult, run

__version__ = "0.1.0"

__all__ = ["SimConfig", "RunResult", "run", "HAVE_KERNEL", "__version__"]
