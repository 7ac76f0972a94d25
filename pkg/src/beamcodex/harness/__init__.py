"""Experiment configuration, end-to-end experiments and deterministic record output."""

from .config import OUTPUT_DIR_ENV, ConfigError, ExperimentConfig, load_config
from .experiments import (MuContext, Site, build_dataset, evaluate_ssb, make_estimator, mu_drop,
                          run_csirs_sweep, run_pipeline, run_site_transfer, run_ssb_experiment,
                          run_training, sweep_points, training_sets)
from .records import SCHEMA_VERSION, RecordError, render_csv, write_csv

__all__ = [
    "OUTPUT_DIR_ENV", "ConfigError", "ExperimentConfig", "load_config", "MuContext", "Site",
    "build_dataset", "evaluate_ssb", "make_estimator", "mu_drop", "run_csirs_sweep", "run_pipeline",
    "run_site_transfer", "run_ssb_experiment", "run_training", "sweep_points", "training_sets", "SCHEMA_VERSION",
    "RecordError", "render_csv", "write_csv",
]
