"""Two-step stacked ensemble for case/control strain cohorts."""

import json

from ._twostep import (
    Cohort,
    Model,
    TwostepError,
    auc,
    columns,
    load_cohort,
    load_model,
    parse_cohort,
    partition_sizes,
    screen,
    welch_t_test,
)
from . import _twostep

__all__ = [
    "Cohort", "Model", "TwostepError", "auc", "columns", "default_calibration", "default_experiment",
    "generate_cohort", "load_cohort", "load_model", "parse_cohort", "partition_sizes", "run_experiment",
    "screen", "train", "welch_t_test",
]


def default_calibration():
    return json.loads(_twostep.default_calibration_json())


def default_experiment():
    return json.loads(_twostep.default_experiment_json())


def generate_cohort(config=None, **overrides):
    """Synthetic cohort. Keys missing from `config` keep the default calibration."""
    cfg = dict(config or {})
    cfg.update(overrides)
    return _twostep.generate_cohort(json.dumps(cfg))


def run_experiment(config=None, cohort=None):
    """Runs the replicate protocol and returns the report as a dict."""
    return json.loads(_twostep.run_experiment(json.dumps(config or {}), cohort))


def train(config=None, cohort=None):
    """Fits one two-step model. Returns (model, held-out accuracy)."""
    return _twostep.train(json.dumps(config or {}), cohort)
