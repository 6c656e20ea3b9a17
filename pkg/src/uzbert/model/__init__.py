from .checkpoint import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from .config import ConfigError, ModelConfig
from .encoder import (
    IGNORE_INDEX,
    Batch,
    EncoderState,
    ForwardOutput,
    LossError,
    LossResult,
    ModelError,
    SequenceTooLongError,
    backward,
    compute_loss,
    count_parameters,
    forward,
    init_model,
    is_no_decay,
    loss_and_grads,
    parameter_shapes,
)
