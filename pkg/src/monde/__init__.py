"""Monotone-network conditional distribution estimators.

Neural estimators of conditional CDFs whose densities come from exact
derivatives of the network output, trained by maximum likelihood, plus
dataset generators, evaluation metrics, persistence, and a CLI.
"""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .data import Dataset, GeneratorSpec, gen_synthetic
from .models import (FAMILIES, CopulaConfig, CopulaMonde, DiagonalGaussian,
                     MadeConfig, MondeMade, Pumonde, PumondeConfig,
                     StandardStats, UmondeConfig, UnivariateMonde, build_model,
                     default_config)
from .persist import load_model, save_model
from .training import TrainConfig, TrainHistory, evaluate_split, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ExperimentConfig", "load_config", "parse_config",
    "Dataset", "GeneratorSpec", "gen_synthetic",
    "FAMILIES", "CopulaConfig", "CopulaMonde", "DiagonalGaussian",
    "MadeConfig", "MondeMade", "Pumonde", "PumondeConfig", "StandardStats",
    "UmondeConfig", "UnivariateMonde", "build_model", "default_config",
    "load_model", "save_model",
    "TrainConfig", "TrainHistory", "evaluate_split", "train",
    "__version__",
]
