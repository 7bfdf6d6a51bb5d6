"""Synthetic correlation matrices and attribute vectors for benchmark-relative allocation."""

import json
import os

from ._core import (
    NumericalError,
    ValidationError,
    cophenetic_corr,
    compute_metrics,
    correlation_violation,
    eigen_gini,
    generate_attributes,
    linkage,
    mean_correl,
    nearest_correlation,
    paired_t_test,
    perron_frob_sum_neg,
    raw_diagonal_mean,
    sample_gan,
    solve_tracking,
    student_t_cdf,
    version,
)
from . import _core

__version__ = version()

STAGES = (
    "ingest",
    "synth-corpus",
    "train-gan",
    "sample",
    "train-ae",
    "generate-dataset",
    "metrics",
    "backtest",
    "report",
    "run",
)


def default_config():
    return json.loads(_core.default_config())


def effective_config(config=None, base_dir=""):
    return json.loads(_core.effective_config(json.dumps(config or {}), os.fspath(base_dir)))


def run_stage(stage, config=None, out=None, base_dir=""):
    """Run one pipeline stage; returns the stage summary that also lands in its manifest."""
    text = _core.run_stage(stage, json.dumps(config or {}), os.fspath(out) if out else "", os.fspath(base_dir))
    return json.loads(text)
