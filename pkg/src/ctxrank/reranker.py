"""The contextual pass: greedy slot-by-slot re-ranking.

At every slot the first ``window`` unslotted candidates (in main-pass order)
are scored with contextual features built from the items already slotted
above, and the best one on the objective head is placed. Ties go to the
candidate with the better main-pass rank, so a model that cannot tell the
candidates apart leaves the main-pass order untouched.

Cost is at most ``K * window`` candidate scorings. ``rerank_page`` runs the
same loop for one page at a time, carrying the served prefix forward, so
paged output concatenates to exactly the single-pass output.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .domain import Feed, FeedContext, UserProfile
from .errors import EmptyFeed, InvalidConfig, ModeMismatch, SessionExhausted
from .features import FeatureConfig, extract_contextual, pointwise_features


@dataclass(frozen=True)
class RerankParams:
    window: int = 10
    context_depth: int = 5
    page_size: int = 10

    def __post_init__(self):
        if self.window < 1:
            raise InvalidConfig("window must be >= 1")
        if self.context_depth < 1:
            raise InvalidConfig("context_depth must be >= 1")
        if self.page_size < 1:
            raise InvalidConfig("page_size must be >= 1")


@dataclass(frozen=True)
class SessionState:
    user: UserProfile
    served: tuple
    remaining: tuple
    scores: tuple = ()
    feed_length: int = 0

    @property
    def cursor(self) -> int:
        return len(self.served)

    @property
    def done(self) -> bool:
        return not self.remaining


@dataclass
class RerankResult:
    items: list
    scores: list
    scorer_calls: int = 0

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]


def new_session(feed: Feed) -> SessionState:
    if len(feed) == 0:
        raise EmptyFeed("feed has no items")
    return SessionState(feed.user, (), tuple(feed.items), (), len(feed))


def _check_scorer(scorer, objective_task):
    if scorer.feature_mode != "contextual":
        raise ModeMismatch("re-ranking needs a contextual-mode scorer")
    if not 0 <= objective_task < scorer.task_count:
        raise InvalidConfig(f"objective_task {objective_task} >= {scorer.task_count} tasks")


def _slot_one(state: SessionState, scorer, params, cfg, objective_task):
    window = state.remaining[: params.window]
    context = FeedContext(state.served[-params.context_depth:], params.context_depth)
    slot = state.cursor
    X = np.stack([
        np.concatenate([
            pointwise_features(state.user, it, cfg.num_topics),
            extract_contextual(it, context, slot, cfg),
        ])
        for it in window
    ])
    s = scorer.predict(X)[:, objective_task]
    # argmax returns the first maximum, i.e. the best main-pass rank
    best = int(np.argmax(s))
    chosen = window[best]
    state = replace(
        state,
        served=state.served + (chosen,),
        remaining=state.remaining[:best] + state.remaining[best + 1:],
        scores=state.scores + (float(s[best]),),
    )
    return state, len(window)


def _slot_cfg(cfg: FeatureConfig, params: RerankParams, feed_length: int) -> FeatureConfig:
    return replace(cfg, context_depth=params.context_depth, feed_length=feed_length)


def rerank_page(
    state: SessionState,
    scorer,
    params: RerankParams = RerankParams(),
    cfg: FeatureConfig = FeatureConfig(),
    objective_task: int = 0,
    page_size: int | None = None,
) -> tuple[RerankResult, SessionState]:
    """Slot the next ``page_size`` items (default ``params.page_size``)."""
    if state.done:
        raise SessionExhausted("no candidates left in this session")
    _check_scorer(scorer, objective_task)
    n = min(page_size or params.page_size, len(state.remaining))
    slot_cfg = _slot_cfg(cfg, params, state.feed_length)
    start = state.cursor
    calls = 0
    for _ in range(n):
        state, c = _slot_one(state, scorer, params, slot_cfg, objective_task)
        calls += c
    page = RerankResult(list(state.served[start:]), list(state.scores[start:]), calls)
    return page, state


def rerank_feed(
    feed: Feed,
    scorer,
    params: RerankParams = RerankParams(),
    cfg: FeatureConfig = FeatureConfig(),
    objective_task: int = 0,
) -> RerankResult:
    state = new_session(feed)
    result, _ = rerank_page(state, scorer, params, cfg, objective_task, page_size=len(feed))
    return result


def mmr_rerank(feed: Feed, lam: float = 0.5, k: int = 5) -> list:
    """Maximal marginal relevance over the main-pass scores.

    Each step picks ``argmax lam * main_score - (1 - lam) * max_sim`` where
    ``max_sim`` is the largest dot product with the last ``k`` slotted items
    (0 before anything is slotted).
    """
    if len(feed) == 0:
        raise EmptyFeed("feed has no items")
    if not 0.0 <= lam <= 1.0:
        raise InvalidConfig("lambda must lie in [0, 1]")
    remaining = list(feed.items)
    emb = np.stack([it.embedding for it in remaining])
    rel = np.array([it.main_score for it in remaining])
    alive = list(range(len(remaining)))
    chosen: list[int] = []
    while alive:
        if chosen:
            recent = emb[chosen[-k:]]
            max_sim = (emb[alive] @ recent.T).max(axis=1)
        else:
            max_sim = np.zeros(len(alive))
        score = lam * rel[alive] - (1.0 - lam) * max_sim
        pick = alive.pop(int(np.argmax(score)))
        chosen.append(pick)
    return [remaining[i] for i in chosen]
