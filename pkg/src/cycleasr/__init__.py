"""Semi-supervised end-to-end ASR with cycle-consistent and MMD domain losses."""
from .autograd import Tensor, backward, no_grad
from .config import ExperimentConfig, Variant
from .corpus import Corpus, CorpusConfig, generate_corpus
from .model import Architecture, ModelParams

__all__ = [
    "Architecture",
    "Corpus",
    "CorpusConfig",
    "ExperimentConfig",
    "ModelParams",
    "Tensor",
    "Variant",
    "backward",
    "generate_corpus",
    "no_grad",
]
__version__ = "0.1.0"
