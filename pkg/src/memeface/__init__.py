"""Template-conditioned attentional GAN for caption-driven meme-face synthesis."""

from .config import ModelConfig, TrainConfig, config_digest
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .damsm import (
    DamsmBundle,
    DamsmImageEncoder,
    damsm_loss,
    matching_score,
    pretrain_damsm,
    r_precision,
)
from .data import DatasetManifest, TrainingSet, load_training_set
from .discriminator import StageDiscriminator, build_discriminators
from .generator import (
    Generator,
    PatternPyramid,
    StageOutputs,
    build_pattern_pyramid,
    sample_noise,
)
from .losses import discriminator_loss, generator_loss
from .text_encoder import ConditioningAugmenter, TextEncoder, kl_regularizer
from .trainer import aggregate_annotations, train
from .vocab import Caption, Vocabulary, tokenize

__version__ = "0.1.0"

__all__ = [
    "Caption",
    "Checkpoint",
    "CheckpointError",
    "ConditioningAugmenter",
    "DamsmBundle",
    "DamsmImageEncoder",
    "DatasetManifest",
    "Generator",
    "ModelConfig",
    "PatternPyramid",
    "StageDiscriminator",
    "StageOutputs",
    "TextEncoder",
    "TrainConfig",
    "TrainingSet",
    "Vocabulary",
    "aggregate_annotations",
    "build_discriminators",
    "build_pattern_pyramid",
    "config_digest",
    "damsm_loss",
    "discriminator_loss",
    "generator_loss",
    "kl_regularizer",
    "load_checkpoint",
    "load_training_set",
    "matching_score",
    "pretrain_damsm",
    "r_precision",
    "sample_noise",
    "save_checkpoint",
    "tokenize",
    "train",
]
