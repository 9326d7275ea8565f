"""Pre-defined class anchors as regularizers for long-tailed classification."""

from .anchors import AnchorSet, AnchorSource, generate_anchors, pairwise_cosine
from .datagen import GmmSpec, LongTailDataset, class_counts, sample_gmm, split
from .model_train import ClassifierModel, TrainConfig, TrainLog, evaluate, init_model, train
from .sar_reg import SarConfig, SemanticAnchorState

__version__ = "0.1.0"
