from .config import MaskingPolicy, PhaseConfig, TrainConfig, TrainConfigError
from .data import (
    PairInstance,
    PairSamplingError,
    apply_masking,
    build_batch,
    make_pair_instances,
    sample_nsp_pair,
    tokenize_documents,
)
from .optim import NonFiniteGradientError, OptimizerState, learning_rate, optimizer_step
from .pretrain import (
    PretrainResult,
    build_phase_instances,
    describe_schedule,
    evaluate_pairs,
    latest_checkpoint,
    pretrain,
)
