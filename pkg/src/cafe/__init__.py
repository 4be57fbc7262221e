"""Goodness-of-fit tests for observational CATE estimates audited on trial data."""

from .data import PredictionSet, Schema, TrialDataset, attach_predictions, load_dataset, write_dataset
from .engine import (Decision, GroupSummary, TestReport, cafe_m_test, cafe_test, diagnose,
                     group_summaries, run_test, two_stage_diagnose)
from .errors import CafeError
from .learners import FeatureMap, fit_r_learner, fit_s_learner, fit_t_learner
from .partition import Partition, PartitionRule, build_partition, default_group_count, quantile_partition

__version__ = "0.1.0"
