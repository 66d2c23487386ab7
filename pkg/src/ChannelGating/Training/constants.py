# Training recipes and loop tunables
from typing import Any, Dict

LR_POLICIES = ("multistep", "poly")
POLY_POWER = 0.9

# shaping prior on every gate: 40% of the gates off on average
SHAPING_PRIOR: Dict[str, Any] = {"kind": "beta", "params": [0.6, 0.4]}

# final L0 coefficients of the accuracy-vs-MACs sweeps
GAMMA_GRID_CIFAR = (0.0, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20)
GAMMA_GRID_IMAGENET = (0.0, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.30, 0.40)

# TrainSchedule presets, keyword arguments of TrainSchedule
SCHEDULES: Dict[str, Dict[str, Any]] = {
    "cifar-full": {
        "epochs": 500,
        "lr": 0.1,
        "milestones": [300, 375, 450],
        "bs_lambda_start": 0.75,
        "bs_anneal_end_epoch": 100,
        "l0_start_epoch": 100,
        "l0_rampup_end_epoch": 300,
        "l0_gamma_final": 0.05,
        "weight_decay": 5e-4,
    },
    "cifar-desk": {
        "epochs": 40,
        "lr": 0.1,
        "milestones": [24, 30, 36],
        "bs_lambda_start": 0.75,
        "bs_anneal_end_epoch": 8,
        "l0_start_epoch": 8,
        "l0_rampup_end_epoch": 24,
        "l0_gamma_final": 0.05,
        "weight_decay": 5e-4,
    },
    "imagenet": {
        "epochs": 150,
        "lr": 0.1,
        "milestones": [60, 90, 120],
        "bs_lambda_start": 0.75,
        "bs_anneal_end_epoch": 20,
        "l0_start_epoch": 30,
        "l0_rampup_end_epoch": 60,
        "l0_gamma_final": 0.05,
        "weight_decay": 1e-4,
    },
    "bs-fixed": {
        "epochs": 40,
        "lr": 0.1,
        "milestones": [24, 30, 36],
        "bs_lambda_start": 0.75,
        "bs_fixed": True,
        "l0_gamma_final": 0.0,
        "weight_decay": 5e-4,
    },
    "l0-only": {
        "epochs": 40,
        "lr": 0.1,
        "milestones": [24, 30, 36],
        "bs_lambda_start": 0.0,
        "bs_anneal_end_epoch": 0,
        "l0_start_epoch": 8,
        "l0_rampup_end_epoch": 24,
        "l0_gamma_final": 0.05,
        "weight_decay": 5e-4,
    },
}

DEFAULT_SCHEDULE = "cifar-desk"

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_PATTERN = "epoch-{epoch:04d}.ckpt"
FAILURE_DUMP_FILE = "nonfinite-loss.json"
