"""Single-channel EEG sleep staging with a feature-pyramid CNN-transformer trained in two stages:
supervised contrastive pretraining of the backbone, then frozen-backbone multi-level classification."""

from .config import STAGES, RunConfig, load_config
from .model import SleePyCo

__all__ = ["STAGES", "RunConfig", "SleePyCo", "load_config"]
__version__ = "0.1.0"
