from .agent import (Agent, AgentConfig, Batch, CheckpointError, Mode, OUNoise, ReplayBuffer,
                    load_checkpoint, load_warm_start, save_checkpoint)
from .nets import DenseNet, OutputActivation
from .train import Evaluation, TrainingDiverged, TrainingLog, evaluate, train

__all__ = [
    "Agent", "AgentConfig", "Batch", "CheckpointError", "DenseNet", "Evaluation", "Mode",
    "OUNoise", "OutputActivation", "ReplayBuffer", "TrainingDiverged", "TrainingLog",
    "evaluate", "load_checkpoint", "load_warm_start", "save_checkpoint", "train",
]
