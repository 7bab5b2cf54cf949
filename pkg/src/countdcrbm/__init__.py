"""Count-DCRBM: temporal energy-based models for predicting cache-miss events
from per-cycle instruction-mix histograms."""

from .data import (
    GeneratorConfig,
    Sample,
    SampleSet,
    Trace,
    aggregate_labels,
    generate_synthetic,
    load_trace,
    save_trace,
    split_chronological,
    window_dataset,
)
from .evaluation import ConfusionCounts, ScoreSet, confusion, majority_baseline, report_table, score
from .inference import LabelScores, classify, enumerate_label_logits, free_energy_score, gibbs_step
from .model import ModelConfig, ModelParams, UnitKind, init_params, load_params, save_params
from .training import TrainConfig, TrainReport, apply_update, cd_gradients, train

__version__ = "0.1.0"
