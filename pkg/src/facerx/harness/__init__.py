from .crossval import (
    TABLE_HEADER,
    CrossValResult,
    FoldPlan,
    FoldPlanError,
    cross_validate,
    make_fold_plan,
)
from .evaluation import (
    EvalReport,
    decode_indices,
    decode_prescription,
    evaluate,
    predict_probabilities,
    sweep_table,
    threshold_sweep,
)
from .metrics import EmptyPrescriptionError, metrics_from_bits, sample_metrics
from .training import EpochRecord, History, TrainConfig, TrainingError, fit, split_train_val, train
