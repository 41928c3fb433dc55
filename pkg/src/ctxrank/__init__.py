"""Contextual re-ranking of recommendation feeds.

Scores each candidate conditioned on the items already placed above it and
slots items greedily, with a synthetic world for offline experiments.
"""

from .domain import Feed, FeedContext, Impression, Item, SessionLog, UserProfile
from .errors import CtxRankError
from .features import FeatureConfig, extract_contextual, pointwise_features
from .model import ScorerModel, TrainConfig, load_model, save_model, train
from .reranker import RerankParams, mmr_rerank, rerank_feed, rerank_page

__version__ = "0.1.0"

__all__ = [
    "CtxRankError", "Feed", "FeatureConfig", "FeedContext", "Impression", "Item",
    "RerankParams", "ScorerModel", "SessionLog", "TrainConfig", "UserProfile",
    "extract_contextual", "load_model", "mmr_rerank", "pointwise_features",
    "rerank_feed", "rerank_page", "save_model", "train",
]
