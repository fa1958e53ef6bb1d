from .acoustic import (
    AcousticModel,
    Discriminator,
    GeneratorOutput,
    ParameterStore,
    VarianceOutputs,
    count_parameters,
    durations_from_log,
)
from .config import ABLATIONS, ModelConfig
from .layers import AttentionDump, RunContext

__all__ = [
    "ABLATIONS", "AcousticModel", "AttentionDump", "Discriminator", "GeneratorOutput", "ModelConfig",
    "ParameterStore", "RunContext", "VarianceOutputs", "count_parameters", "durations_from_log",
]
