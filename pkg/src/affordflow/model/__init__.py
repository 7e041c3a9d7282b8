from .config import ConfigError, ModelConfig, tiny_config
from .network import AffordanceModel, ConditionSet, ModelInput
from .pipeline import SamplingError, collate, prepare_input, sample_flow
from .schedule import NoiseSchedule, predict_x0, q_sample

__all__ = [
    "AffordanceModel",
    "ConditionSet",
    "ConfigError",
    "ModelConfig",
    "ModelInput",
    "NoiseSchedule",
    "SamplingError",
    "collate",
    "predict_x0",
    "prepare_input",
    "q_sample",
    "sample_flow",
    "tiny_config",
]
