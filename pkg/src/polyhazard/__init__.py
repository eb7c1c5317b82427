"""Continuous-time model-averaged polyhazard survival sampler."""

from .engine import PolyhazardSampler, SamplerConfig, diagnostics, run, run_chain
from .jumps import JumpRates
from .model import Dataset, ModelState, PriorConfig
from .survdist import DistKind

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DistKind",
    "JumpRates",
    "ModelState",
    "PolyhazardSampler",
    "PriorConfig",
    "SamplerConfig",
    "diagnostics",
    "run",
    "run_chain",
]
