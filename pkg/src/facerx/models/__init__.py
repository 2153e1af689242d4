from .networks import (
    ARCHITECTURES,
    ConfigError,
    ConventionalCnn,
    InputSizeError,
    Model,
    ThreeGrainedCnn,
    build_conventional,
    build_model,
    build_three_grained,
)
from .checkpoint import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)

__all__ = [
    "ARCHITECTURES",
    "CheckpointError",
    "CheckpointShapeError",
    "CheckpointTruncatedError",
    "CheckpointVersionError",
    "ConfigError",
    "ConventionalCnn",
    "InputSizeError",
    "Model",
    "ThreeGrainedCnn",
    "build_conventional",
    "build_model",
    "build_three_grained",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
]
