"""Attention-based fusion of multi-source feature banks, plus exact
information-theory checks of why fusing complementary sources helps."""

from .bankio import FeatureBankDataset, SyntheticTaskSpec, gen_synthetic, load_bank, save_bank
from .fusion import Architecture, FusionModel, Kind
from .training import TrainConfig, evaluate, train

__all__ = [
    "Architecture",
    "FeatureBankDataset",
    "FusionModel",
    "Kind",
    "SyntheticTaskSpec",
    "TrainConfig",
    "evaluate",
    "gen_synthetic",
    "load_bank",
    "save_bank",
    "train",
]
__version__ = "0.1.0"
