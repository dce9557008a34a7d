"""Sociodemographic inference from travel-diary mobility descriptors."""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .experiments import (
    Dataset, ExperimentConfig, SplitPlan, make_folds, make_split, prepare_dataset,
    run_descriptive_stats, run_mt_vs_st, run_uplift,
)
from .features import FAMILIES, Standardizer, person_descriptors
from .ingest import TASKS, load_dataset
from .metrics import evaluate, macro_auroc_ovr, nll
from .mtl import TrainConfig, multitask_net, single_task_net, train
from .synth import CohortSpec, generate, write_cohort

__all__ = [
    "PipelineConfig", "load_config", "Dataset", "ExperimentConfig", "SplitPlan", "make_folds",
    "make_split", "prepare_dataset", "run_descriptive_stats", "run_mt_vs_st", "run_uplift",
    "FAMILIES", "Standardizer", "person_descriptors", "TASKS", "load_dataset", "evaluate",
    "macro_auroc_ovr", "nll", "TrainConfig", "multitask_net", "single_task_net", "train",
    "CohortSpec", "generate", "write_cohort",
]
