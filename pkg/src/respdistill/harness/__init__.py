"""Config-driven experiment orchestration and the ``respdistill`` CLI."""

from .config import ExperimentConfig, load_config, parse_config
from .runner import (
    RunResult,
    Workspace,
    cmd_ablate,
    cmd_distill,
    cmd_ensemble_eval,
    cmd_gen_data,
    cmd_plot,
    cmd_report,
    cmd_second_gen,
    cmd_sweep_k,
    cmd_train_teachers,
)
