from .config import CurriculumSchedule, RegularizerConfig, TrainConfig, pretrain_preset, preset
from .optim import AdamWState, DivergenceError, adamw_step, clip_grad_norm, lr_at
from .trainer import MetricsRecord, TrainResult, entropy_regularized_loss, train
from .plan import (
    CellResult, CellSpec, DefaultRunner, ExperimentPlan, ExperimentReport, PlanError, SeedStats, perturb,
    pretrain_cell, run_cell, run_plan,
)
