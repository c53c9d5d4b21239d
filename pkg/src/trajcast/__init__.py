"""Multi-agent trajectory forecasting with pooled interaction, map and ego-plan features."""

from .data import AgentTrack, Scenario
from .estimator import (ConstantVelocityKalman, LinearExtrapolation, NoiseLSTM, TrajectoryForecaster,
                        VanillaLSTM)
from .interaction import Toggles
from .maps import HdMap, RasterConfig
from .model import ModelConfig, TrajectoryNet
from .synthetic import generate_synthetic
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["AgentTrack", "Scenario", "ConstantVelocityKalman", "LinearExtrapolation", "NoiseLSTM",
           "TrajectoryForecaster", "VanillaLSTM", "Toggles", "HdMap", "RasterConfig", "ModelConfig",
           "TrajectoryNet", "generate_synthetic", "TrainConfig", "train"]
