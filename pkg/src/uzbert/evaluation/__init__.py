from .predictors import (
    AdversarialPredictor,
    CheckpointPredictor,
    OraclePredictor,
    UniformPredictor,
    predict_topk_wordpiece,
)
from .protocol import (
    ALL_WORDS,
    SINGLE_TOKEN,
    EvalConfig,
    EvalReport,
    EvalSequence,
    EvaluationError,
    Predictor,
    ReportCell,
    RunScore,
    SkipSequence,
    aggregate_runs,
    format_cell,
    is_table_cell,
    make_eval_sequences,
    run_evaluation,
    score_run,
    window_count,
)
