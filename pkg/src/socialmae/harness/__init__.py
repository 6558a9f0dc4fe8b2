"""Config-driven experiment driver behind the ``socialmae`` command."""
from .commands import cmd_ablate, cmd_eval, cmd_finetune, cmd_pretrain, cmd_synth, run_pipeline
from .config import AblateConfig, DataSource, ExperimentConfig, LossWeights, config_from_dict, load_config

__all__ = [
    "AblateConfig",
    "DataSource",
    "ExperimentConfig",
    "LossWeights",
    "cmd_ablate",
    "cmd_eval",
    "cmd_finetune",
    "cmd_pretrain",
    "cmd_synth",
    "config_from_dict",
    "load_config",
    "run_pipeline",
]
