from .Schedule import TrainSchedule, gamma_grid, gamma_point, learning_rate, loss_coefficients, schedule_table
from .Optimizer import NesterovSGD, is_gating_parameter
from .Trainer import (
    EvalResult,
    NonFiniteLossError,
    StepMetrics,
    Trainer,
    evaluate,
    load_model_checkpoint,
    save_training_checkpoint,
    train_step,
)
from .Config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config
