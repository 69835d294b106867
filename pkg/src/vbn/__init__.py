"""Variational Bayesian entity representations with hierarchical priors."""

from .estimator import VBN
from .factors import GammaFactor, GaussianFactor
from .graph import CycleError, DanglingIdError, EntityGraph, GraphError, Partition, build_graph, check_partition, partition
from .inference import (
    ScoreMoments, aggregate_query, predict, probit_logistic_integral, rank_candidates,
    score_moments_cooc, score_moments_rel, validate_normal_approx,
)
from .io import InputError, ModelArchive
from .metrics import RankedTestCase, hit_rate_at, mpr, spearman
from .objective import NumericalFault, elbo
from .sampling import CoOccurrenceData, EpochDataset, RelationData, build_epoch_dataset
from .state import ModelState
from .trainer import TrainConfig, TrainingData, fit

__version__ = "0.1.0"

__all__ = [
    "VBN", "GammaFactor", "GaussianFactor", "CycleError", "DanglingIdError", "EntityGraph",
    "GraphError", "Partition", "build_graph", "check_partition", "partition", "ScoreMoments",
    "aggregate_query", "predict", "probit_logistic_integral", "rank_candidates",
    "score_moments_cooc", "score_moments_rel", "validate_normal_approx", "InputError",
    "ModelArchive", "RankedTestCase", "hit_rate_at", "mpr", "spearman", "NumericalFault",
    "elbo", "CoOccurrenceData", "EpochDataset", "RelationData", "build_epoch_dataset",
    "ModelState", "TrainConfig", "TrainingData", "fit",
]
