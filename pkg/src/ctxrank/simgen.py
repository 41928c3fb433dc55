"""Synthetic traffic: a world of users and items, a main pass, and logged sessions.

Ground truth engagement on task t for user u, item v and the items above it:

    p = sigmoid(alpha * <u, v> - beta_u * avg_sim(v, previous 5) + bias + offset_t)

``beta_u`` is the user's diversity sensitivity (0 or ``beta_hi``). It and
``p`` stay inside this module; logs only carry features and sampled labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .domain import Feed, FeedContext, Impression, Item, SessionLog, UserProfile
from .errors import InvalidConfig
from .features import FeatureConfig, avg_similarity, contextual_matrix, pointwise_features
from .model import sigmoid

FATIGUE_DEPTH = 5

# Stream ids for independent RNG streams derived from one seed.
_WORLD, _TRAIN, _HELDOUT, _EVAL_FEEDS = 0, 1, 2, 3


@dataclass(frozen=True)
class WorldConfig:
    num_users: int = 300
    num_items: int = 2000
    dim: int = 16
    num_topics: int = 8
    topic_spread: float = 0.1
    interest_spread: float = 0.35
    sessions_per_day: int = 90
    num_days: int = 28
    heldout_sessions: int = 15000
    feed_length: int = 20
    candidate_pool: int = 60
    affinity_scale: float = 2.0
    bias: float = 2.5
    task_offsets: tuple = (0.0, -1.5)
    beta_hi: float = 2.5
    beta_fraction: float = 0.5
    main_pass_noise: float = 0.1
    shuffle_prob: float = 0.3
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task_offsets", tuple(float(t) for t in self.task_offsets))
        checks = [
            (self.num_users >= 1, "num_users must be >= 1"),
            (self.num_items >= 1, "num_items must be >= 1"),
            (self.dim >= 1, "dim must be >= 1"),
            (self.num_topics >= 1, "num_topics must be >= 1"),
            (self.sessions_per_day >= 1, "sessions_per_day must be >= 1"),
            (self.num_days >= 1, "num_days must be >= 1"),
            (self.heldout_sessions >= 0, "heldout_sessions must be >= 0"),
            (self.feed_length >= 1, "feed_length must be >= 1"),
            (self.candidate_pool >= self.feed_length, "candidate_pool must be >= feed_length"),
            (self.candidate_pool <= self.num_items, "candidate_pool must be <= num_items"),
            (len(self.task_offsets) >= 1, "need at least one task"),
            (self.beta_hi >= 0, "beta_hi must be >= 0"),
            (0.0 <= self.beta_fraction <= 1.0, "beta_fraction must lie in [0, 1]"),
            (0.0 <= self.shuffle_prob <= 1.0, "shuffle_prob must lie in [0, 1]"),
            (0.0 <= self.label_noise < 0.5, "label_noise must lie in [0, 0.5)"),
            (self.topic_spread >= 0 and self.interest_spread >= 0, "spreads must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidConfig(msg)

    @property
    def task_count(self) -> int:
        return len(self.task_offsets)

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            context_depth=FATIGUE_DEPTH, feed_length=self.feed_length, num_topics=self.num_topics
        )


@dataclass
class World:
    cfg: WorldConfig
    users: list
    items: list
    centroids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self._emb = np.stack([it.embedding for it in self.items])
        self._topics = np.array([it.topic for it in self.items])
        self._user_index = {u.id: i for i, u in enumerate(self.users)}

    def user(self, user_id: str) -> UserProfile:
        return self.users[self._user_index[user_id]]


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def generate_world(cfg: WorldConfig) -> World:
    """Topic-clustered unit item embeddings and users drawn near one topic each."""
    rng = _rng(cfg.seed, _WORLD)
    if cfg.num_topics <= cfg.dim:
        q, _ = np.linalg.qr(rng.standard_normal((cfg.dim, cfg.num_topics)))
        centroids = q.T.copy()
    else:
        centroids = _unit_rows(rng.standard_normal((cfg.num_topics, cfg.dim)))

    topics = rng.integers(0, cfg.num_topics, size=cfg.num_items)
    raw = centroids[topics] + cfg.topic_spread * rng.standard_normal((cfg.num_items, cfg.dim))
    emb = _unit_rows(raw)
    items = [Item(f"v{i}", emb[i], int(topics[i]), 0.5) for i in range(cfg.num_items)]

    fav = rng.integers(0, cfg.num_topics, size=cfg.num_users)
    uraw = centroids[fav] + cfg.interest_spread * rng.standard_normal((cfg.num_users, cfg.dim))
    uemb = _unit_rows(uraw)
    sensitive = rng.random(cfg.num_users) < cfg.beta_fraction
    users = [
        UserProfile(f"u{i}", uemb[i], cfg.beta_hi if sensitive[i] else 0.0)
        for i in range(cfg.num_users)
    ]
    return World(cfg, users, items, centroids)


def p_true(user: UserProfile, item: Item, context: FeedContext, cfg: WorldConfig, task: int = 0) -> float:
    """Ground-truth engagement probability for one slot."""
    z = (
        cfg.affinity_scale * float(np.dot(user.interest_embedding, item.embedding))
        - user.diversity_sensitivity * avg_similarity(item, context, FATIGUE_DEPTH)
        + cfg.bias
        + cfg.task_offsets[task]
    )
    return float(sigmoid(z))


def _avg_sim_sequence(emb: np.ndarray) -> np.ndarray:
    gram = emb @ emb.T
    out = np.zeros(emb.shape[0])
    for i in range(1, emb.shape[0]):
        out[i] = gram[i, max(0, i - FATIGUE_DEPTH):i].mean()
    return out


def slate_probabilities(user: UserProfile, ordering, cfg: WorldConfig) -> np.ndarray:
    """p_true for every slot and task of an ordered slate, shape (n, T)."""
    emb = np.stack([it.embedding for it in ordering])
    sim = _avg_sim_sequence(emb)
    base = cfg.affinity_scale * (emb @ user.interest_embedding) - user.diversity_sensitivity * sim
    offsets = np.asarray(cfg.task_offsets)
    return sigmoid(base[:, None] + cfg.bias + offsets[None, :])


def expected_slate_engagement(user: UserProfile, ordering, cfg: WorldConfig, task: int = 0) -> float:
    """Expected number of engagements on ``task`` over the whole slate."""
    if not ordering:
        raise ValueError("ordering must be nonempty")
    return float(np.sum(slate_probabilities(user, ordering, cfg)[:, task]))


def main_pass_feed(world: World, user: UserProfile, rng: np.random.Generator) -> Feed:
    """Point-wise ranking of a random candidate pool by noisy affinity."""
    cfg = world.cfg
    pool = rng.choice(cfg.num_items, size=cfg.candidate_pool, replace=False)
    noisy = world._emb[pool] @ user.interest_embedding
    noisy = noisy + cfg.main_pass_noise * rng.standard_normal(len(pool))
    scores = sigmoid(cfg.affinity_scale * noisy + cfg.bias)
    top = np.argsort(-scores, kind="stable")[: cfg.feed_length]
    items = [replace(world.items[pool[j]], main_score=float(scores[j])) for j in top]
    return Feed(user, tuple(items))


def sample_feeds(world: World, n_sessions: int, stream: int = _EVAL_FEEDS) -> list:
    """Fresh main-pass feeds for offline ranker comparison."""
    rng = _rng(world.cfg.seed, stream)
    feeds = []
    for _ in range(n_sessions):
        user = world.users[int(rng.integers(0, len(world.users)))]
        feeds.append(main_pass_feed(world, user, rng))
    return feeds


def _log_session(world, feed, rng, session_id, day, fcfg):
    cfg = world.cfg
    order = list(feed.items)
    if rng.random() < cfg.shuffle_prob:
        order = [order[i] for i in rng.permutation(len(order))]
    emb = np.stack([it.embedding for it in order])
    topics = np.array([it.topic for it in order])
    ctx = contextual_matrix(emb, topics, fcfg)
    probs = slate_probabilities(feed.user, order, cfg)
    labels = rng.random(probs.shape) < probs
    if cfg.label_noise > 0:
        labels ^= rng.random(probs.shape) < cfg.label_noise
    out = []
    for pos, it in enumerate(order):
        out.append(Impression(
            session_id=session_id,
            day=day,
            user_id=feed.user.id,
            item_id=it.id,
            position=pos,
            pointwise=pointwise_features(feed.user, it, cfg.num_topics),
            contextual=ctx[pos],
            labels=labels[pos].astype(int).tolist(),
            similarity_score=float(ctx[pos, 0]),
        ))
    return out


def simulate_sessions(world: World, split: str = "train") -> SessionLog:
    """Log sessions served in main-pass order (or shuffled, for exploration).

    ``split="train"`` produces ``num_days * sessions_per_day`` sessions tagged
    with days 0..num_days-1; ``split="heldout"`` produces ``heldout_sessions``
    sessions on day ``num_days`` from an independent random stream.
    """
    cfg = world.cfg
    if split == "train":
        rng, n, stream = _rng(cfg.seed, _TRAIN), cfg.num_days * cfg.sessions_per_day, _TRAIN
    elif split == "heldout":
        rng, n, stream = _rng(cfg.seed, _HELDOUT), cfg.heldout_sessions, _HELDOUT
    else:
        raise InvalidConfig(f"unknown split {split!r}")
    fcfg = cfg.feature_config()
    imps = []
    for sid in range(n):
        day = sid // cfg.sessions_per_day if split == "train" else cfg.num_days
        user = world.users[int(rng.integers(0, len(world.users)))]
        feed = main_pass_feed(world, user, rng)
        imps.extend(_log_session(world, feed, rng, sid, day, fcfg))
    meta = {
        "dim": cfg.dim,
        "task_count": cfg.task_count,
        "context_depth": fcfg.context_depth,
        "num_topics": cfg.num_topics,
        "feed_length": cfg.feed_length,
        "seed": cfg.seed,
        "split": split,
        "stream": stream,
    }
    return SessionLog(imps, meta)
