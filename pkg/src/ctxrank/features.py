"""Point-wise and contextual feature extraction.

The contextual block has ten entries in a fixed order, which saved models
depend on:

    0  avg_embedding_similarity    dot(candidate, mean of last k embeddings)
    1-5 pairwise_similarity_lag_m  dot(candidate, item m slots above), m=1..5
    6  mean_pairwise_similarity    mean of the defined lags
    7  topic_overlap_fraction      share of the last min(k, 5) items on the same topic
    8  immediate_topic_repeat      1.0 if the item directly above shares the topic
    9  normalized_position         slot index / feed length

Missing context is filled with ``missing_context_fill`` (0.0 by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import FeedContext, Item, UserProfile
from .errors import DimensionMismatch, InvalidConfig

N_CONTEXTUAL = 10
MAX_LAG = 5

CONTEXTUAL_FEATURE_NAMES = (
    "avg_embedding_similarity",
    "pairwise_similarity_lag_1",
    "pairwise_similarity_lag_2",
    "pairwise_similarity_lag_3",
    "pairwise_similarity_lag_4",
    "pairwise_similarity_lag_5",
    "mean_pairwise_similarity",
    "topic_overlap_fraction",
    "immediate_topic_repeat",
    "normalized_position",
)


@dataclass(frozen=True)
class FeatureConfig:
    context_depth: int = 5
    missing_context_fill: float = 0.0
    feed_length: int = 20
    num_topics: int = 8

    def __post_init__(self):
        if self.context_depth < 1:
            raise InvalidConfig("context_depth must be >= 1")
        if self.feed_length < 1:
            raise InvalidConfig("feed_length must be >= 1")
        if self.num_topics < 1:
            raise InvalidConfig("num_topics must be >= 1")

    @property
    def pointwise_dim(self) -> int:
        return 2 + self.num_topics


def _check_dims(candidate: Item, items) -> None:
    d = candidate.embedding.shape[0]
    for it in items:
        if it.embedding.shape[0] != d:
            raise DimensionMismatch(
                f"item {it.id!r} has dimension {it.embedding.shape[0]}, candidate has {d}"
            )


def average_context_embedding(context: FeedContext, k: int, dim: int | None = None) -> np.ndarray:
    """Mean of the last ``min(k, len(prefix))`` embeddings; zeros when empty.

    The result is not re-normalized. ``dim`` sizes the zero vector for an
    empty context.
    """
    window = context.window(k)
    if not window:
        return np.zeros(dim or 0)
    return np.mean(np.stack([it.embedding for it in window]), axis=0)


def avg_similarity(candidate: Item, context: FeedContext, k: int) -> float:
    window = context.window(k)
    if not window:
        return 0.0
    _check_dims(candidate, window)
    avg = average_context_embedding(context, k)
    return float(np.dot(candidate.embedding, avg))


def pairwise_similarities(
    candidate: Item, context: FeedContext, k: int, fill: float = 0.0
) -> tuple[np.ndarray, float]:
    """Dot products with the items 1..k slots above, plus their mean.

    Lags past the start of the feed hold ``fill``; the mean covers only the
    defined lags and equals ``fill`` for an empty context.
    """
    window = context.window(k)
    _check_dims(candidate, window)
    lags = np.full(k, fill, dtype=np.float64)
    for m, it in enumerate(reversed(window)):
        lags[m] = np.dot(candidate.embedding, it.embedding)
    n = len(window)
    mean = float(np.mean(lags[:n])) if n else float(fill)
    return lags, mean


def extract_contextual(
    candidate: Item, context: FeedContext, slot_index: int, cfg: FeatureConfig
) -> np.ndarray:
    if not 0 <= slot_index < cfg.feed_length:
        raise ValueError(f"slot_index {slot_index} outside [0, {cfg.feed_length})")
    k = cfg.context_depth
    fill = cfg.missing_context_fill
    out = np.empty(N_CONTEXTUAL, dtype=np.float64)

    window = context.window(k)
    out[0] = avg_similarity(candidate, context, k) if window else fill

    n_lags = min(k, MAX_LAG)
    lags, _ = pairwise_similarities(candidate, context, n_lags, fill)
    out[1:1 + MAX_LAG] = fill
    out[1:1 + n_lags] = lags
    defined = min(len(window), n_lags)
    out[6] = float(np.mean(out[1:1 + defined])) if defined else fill

    recent = context.window(n_lags)
    if recent:
        out[7] = sum(it.topic == candidate.topic for it in recent) / len(recent)
        out[8] = 1.0 if recent[-1].topic == candidate.topic else 0.0
    else:
        out[7] = fill
        out[8] = fill
    out[9] = slot_index / cfg.feed_length
    return out


def contextual_matrix(embeddings: np.ndarray, topics: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Contextual features for every slot of an already ordered slate.

    Row i equals ``extract_contextual(item_i, prefix items_<i, i, cfg)`` up to
    floating point rounding; it computes one Gram matrix instead of per-slot
    dot products, which is what the log generator needs.
    """
    n = embeddings.shape[0]
    k = cfg.context_depth
    fill = cfg.missing_context_fill
    n_lags = min(k, MAX_LAG)
    gram = embeddings @ embeddings.T
    out = np.full((n, N_CONTEXTUAL), fill, dtype=np.float64)
    for i in range(n):
        lo = max(0, i - k)
        if i > 0:
            out[i, 0] = gram[i, lo:i].mean()
            defined = min(i, n_lags)
            lags = gram[i, i - defined:i][::-1]
            out[i, 1:1 + defined] = lags
            out[i, 6] = lags.mean()
            recent = topics[i - defined:i]
            out[i, 7] = np.count_nonzero(recent == topics[i]) / defined
            out[i, 8] = 1.0 if topics[i - 1] == topics[i] else 0.0
        out[i, 9] = i / cfg.feed_length
    return out


def pointwise_features(user: UserProfile, item: Item, num_topics: int) -> np.ndarray:
    """The user-item block: [affinity, main_score, one-hot topic]."""
    if user.interest_embedding.shape != item.embedding.shape:
        raise DimensionMismatch(
            f"user {user.id!r} and item {item.id!r} embeddings differ in length"
        )
    if item.topic >= num_topics:
        raise DimensionMismatch(f"item {item.id!r}: topic {item.topic} >= {num_topics}")
    out = np.zeros(2 + num_topics, dtype=np.float64)
    out[0] = float(np.dot(user.interest_embedding, item.embedding))
    out[1] = item.main_score
    out[2 + item.topic] = 1.0
    return out
