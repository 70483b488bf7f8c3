"""Deep active learning from sparse, noisy crowd annotations."""

from .active import ActiveLoopState, Strategy, run_simulation, select_annotator, select_samples
from .baselines import SparseReliabilityModel, fit_dlc_lr, fit_dlc_sparse
from .bayesian_net import BayesianClassifier, NetworkConfig, PredictiveSample, predictive_entropy
from .dataset import Annotation, AnnotationSet, Sample, load_annotations, save_annotations
from .em import EmConfig, EmState, LftcConfig, e_step, fit, m_step
from .estimators import CrowdClassifier, LogisticCrowdClassifier, MajorityVoteAggregator
from .lftc import AnnotatorModel, reliability
from .metrics import accuracy, auc, pearson
from .synthetic import SyntheticGroundTruth, generate_bimodal_crowd, generate_synthetic
from .voting import majority_vote

__version__ = "0.1.0"

__all__ = [
    "ActiveLoopState",
    "Annotation",
    "AnnotationSet",
    "AnnotatorModel",
    "BayesianClassifier",
    "CrowdClassifier",
    "EmConfig",
    "EmState",
    "LftcConfig",
    "LogisticCrowdClassifier",
    "MajorityVoteAggregator",
    "NetworkConfig",
    "PredictiveSample",
    "Sample",
    "SparseReliabilityModel",
    "Strategy",
    "SyntheticGroundTruth",
    "accuracy",
    "auc",
    "e_step",
    "fit",
    "fit_dlc_lr",
    "fit_dlc_sparse",
    "generate_bimodal_crowd",
    "generate_synthetic",
    "load_annotations",
    "m_step",
    "majority_vote",
    "pearson",
    "predictive_entropy",
    "reliability",
    "run_simulation",
    "save_annotations",
    "select_annotator",
    "select_samples",
]
