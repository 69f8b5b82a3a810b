"""Adversarial completion of missing visual features for multimodal
knowledge-graph link prediction."""

from .config import DataConfig, ExperimentConfig
from .completer import CompleterConfig
from .kgc import KgcConfig
from .runner import run_experiment, sweep

__version__ = "0.1.0"

__all__ = [
    "CompleterConfig",
    "DataConfig",
    "ExperimentConfig",
    "KgcConfig",
    "run_experiment",
    "sweep",
    "__version__",
]
