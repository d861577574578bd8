"""Open-set person re-identification: descriptors, metric learning, trial
protocol and DIR/FAR evaluation."""

from .core import Dataset, ImageRecord, Session, load_manifest, read_feature_cache, write_feature_cache
from .evaluation import EvalOutcome, aggregate, cmc_at_far, dir_rate, evaluate_partition, far_rate, roc_curve
from .features import FeatureConfig, PixelImage, extract_descriptor
from .metrics import MetricKind, MetricModel, PairSet, score, score_matrix
from .protocol import ProtocolConfig, TrialPartition, make_partition
from .reduce import PcaModel, fit_pca, project

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ImageRecord", "Session", "load_manifest", "read_feature_cache", "write_feature_cache",
    "EvalOutcome", "aggregate", "cmc_at_far", "dir_rate", "evaluate_partition", "far_rate", "roc_curve",
    "FeatureConfig", "PixelImage", "extract_descriptor",
    "MetricKind", "MetricModel", "PairSet", "score", "score_matrix",
    "ProtocolConfig", "TrialPartition", "make_partition",
    "PcaModel", "fit_pca", "project",
]
