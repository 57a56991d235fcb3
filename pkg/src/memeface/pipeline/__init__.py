from .cluster import KMeansResult, kmeans_cluster, remove_outliers
from .features import TinyImageFeatures, extract_features
from .images import CaptionLayout, crop_caption_region
from .lm import (
    BOS,
    CharNgramLM,
    caption_length,
    length_filter,
    perplexity,
    perplexity_filter,
)
from .run import PipelineConfig, RawSample, TsvCaptionSource, curate, derive_template
from .split import apportion_train_counts, split_manifest

__all__ = [
    "BOS",
    "CaptionLayout",
    "CharNgramLM",
    "KMeansResult",
    "PipelineConfig",
    "RawSample",
    "TinyImageFeatures",
    "TsvCaptionSource",
    "apportion_train_counts",
    "caption_length",
    "crop_caption_region",
    "curate",
    "derive_template",
    "extract_features",
    "kmeans_cluster",
    "length_filter",
    "perplexity",
    "perplexity_filter",
    "remove_outliers",
    "split_manifest",
]
