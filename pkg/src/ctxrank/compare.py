"""Offline comparison of ranking policies against the simulator's ground truth."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .domain import Feed
from .features import FeatureConfig
from .reranker import RerankParams, mmr_rerank, rerank_feed
from .simgen import FATIGUE_DEPTH, World, _avg_sim_sequence, expected_slate_engagement

Ranker = Callable[[Feed], list]


def pointwise_ranker() -> Ranker:
    return lambda feed: list(feed.items)


def mmr_ranker(lam: float = 0.5, k: int = FATIGUE_DEPTH) -> Ranker:
    return lambda feed: mmr_rerank(feed, lam, k)


def contextual_ranker(scorer, params: RerankParams, cfg: FeatureConfig, objective_task: int = 0) -> Ranker:
    def rank(feed):
        return rerank_feed(feed, scorer, params, cfg, objective_task).items
    return rank


def mean_intra_feed_similarity(ordering) -> float:
    """Mean similarity of each slot to the average of the five slots above it."""
    emb = np.stack([it.embedding for it in ordering])
    sims = _avg_sim_sequence(emb)
    return float(sims[1:].mean()) if len(ordering) > 1 else 0.0


def compare_rankers(world: World, feeds: list, rankers: dict, reference: str = "pointwise",
                    task: int = 0) -> dict:
    """Score every ranker on every feed with the ground-truth slate value.

    Users are split into the context-free segment (sensitivity 0) and the
    fatigued segment. Win rates and relative differences are measured
    against ``reference``.
    """
    if reference not in rankers:
        raise ValueError(f"reference ranker {reference!r} not supplied")
    names = list(rankers)
    values = {n: [] for n in names}
    diversity = {n: [] for n in names}
    segment = []
    for feed in feeds:
        segment.append("sensitive" if feed.user.diversity_sensitivity > 0 else "insensitive")
        for n in names:
            order = rankers[n](feed)
            values[n].append(expected_slate_engagement(feed.user, order, world.cfg, task))
            diversity[n].append(mean_intra_feed_similarity(order))

    seg = np.array(segment)
    ref = np.array(values[reference])
    report = {"sessions": len(feeds), "reference": reference, "rankers": {}}
    for n in names:
        v = np.array(values[n])
        entry = {
            "mean_engagement": float(v.mean()),
            "mean_similarity": float(np.mean(diversity[n])),
            "segments": {},
        }
        for s in ("insensitive", "sensitive"):
            m = seg == s
            if not m.any():
                continue
            ref_mean = float(ref[m].mean())
            entry["segments"][s] = {
                "sessions": int(m.sum()),
                "mean_engagement": float(v[m].mean()),
                "mean_improvement": float((v[m] - ref[m]).mean()),
                "relative_improvement": float((v[m] - ref[m]).mean() / ref_mean),
                "mean_abs_relative_diff": float(np.abs(v[m] - ref[m]).mean() / ref_mean),
                "win_rate": float(np.mean(v[m] > ref[m])),
            }
        report["rankers"][n] = entry
    return report


def format_table(report: dict) -> str:
    head = f"{'ranker':<12} {'engagement':>10} {'similarity':>10} {'sens.gain%':>10} {'sens.win':>9} {'insens.|d|%':>11}"
    lines = [head, "-" * len(head)]
    for name, e in report["rankers"].items():
        sens = e["segments"].get("sensitive", {})
        ins = e["segments"].get("insensitive", {})
        lines.append(
            f"{name:<12} {e['mean_engagement']:>10.4f} {e['mean_similarity']:>10.4f} "
            f"{100 * sens.get('relative_improvement', math.nan):>10.3f} "
            f"{sens.get('win_rate', math.nan):>9.3f} "
            f"{100 * ins.get('mean_abs_relative_diff', math.nan):>11.4f}"
        )
    return "\n".join(lines) + "\n"
