"""Multi-view graph fusion for aspect-based sentiment analysis."""
from .config import DEPTH_PRESETS, TrainConfig
from .contrastive import ContrastiveConfig
from .estimator import CMVFuseClassifier, ViewGraphBuilder
from .graphs import LABELS, AmrRelationVocabulary, ParsedExample, ViewGraphs
from .model import CMVFuseModel

__all__ = [
    "CMVFuseClassifier",
    "CMVFuseModel",
    "ContrastiveConfig",
    "DEPTH_PRESETS",
    "LABELS",
    "AmrRelationVocabulary",
    "ParsedExample",
    "TrainConfig",
    "ViewGraphBuilder",
    "ViewGraphs",
]

__version__ = "0.1.0"
