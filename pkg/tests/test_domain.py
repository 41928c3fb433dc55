import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxrank.domain import (
    Feed,
    FeedContext,
    Impression,
    Item,
    SessionLog,
    UserProfile,
    load_corpus,
    load_log,
    read_jsonl,
    save_corpus,
    save_log,
    validate_corpus,
)
from ctxrank.errors import (
    ArtifactIOError,
    DegenerateEmbedding,
    DimensionMismatch,
    DuplicateId,
    EmptyLog,
    InvalidItem,
)
from oracles import random_items, unit


def _item(i, emb, topic=0, score=0.5):
    return Item(f"i{i}", emb, topic, score)


class TestValidateCorpus:
    def test_well_formed_corpus_passes(self):
        rng = np.random.default_rng(0)
        items = [_item(i, unit(rng.standard_normal(4))) for i in range(3)]
        assert len(validate_corpus(items, 4)) == 3

    def test_wrong_length(self):
        with pytest.raises(DimensionMismatch):
            validate_corpus([_item(0, [1.0, 0.0, 0.0])], 4)

    def test_zero_embedding(self):
        with pytest.raises(DegenerateEmbedding):
            validate_corpus([_item(0, np.zeros(4))], 4)

    def test_far_from_unit_rejected(self):
        with pytest.raises(DegenerateEmbedding):
            validate_corpus([_item(0, [2.0, 0.0, 0.0, 0.0])], 4)

    def test_near_unit_is_renormalized(self):
        out = validate_corpus([_item(0, [1.0005, 0.0, 0.0, 0.0])], 4)
        assert np.linalg.norm(out[0].embedding) == pytest.approx(1.0, abs=1e-12)

    def test_duplicate_ids(self):
        e = unit([1, 1, 0, 0])
        with pytest.raises(DuplicateId):
            validate_corpus([_item(0, e), _item(0, e)], 4)

    @pytest.mark.parametrize("score", [-0.1, 1.5, float("nan")])
    def test_main_score_range(self, score):
        with pytest.raises(InvalidItem):
            validate_corpus([_item(0, unit([1, 0, 0, 0]), score=score)], 4)

    def test_negative_topic(self):
        with pytest.raises(InvalidItem):
            validate_corpus([_item(0, unit([1, 0, 0, 0]), topic=-1)], 4)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(1, 8))
    def test_idempotent(self, seed, n, dim):
        rng = np.random.default_rng(seed)
        raw = [_item(i, unit(rng.standard_normal(dim)) * (1 + rng.uniform(-5e-4, 5e-4)))
               for i in range(n)]
        once = validate_corpus(raw, dim)
        twice = validate_corpus(once, dim)
        assert all(a.embedding.tobytes() == b.embedding.tobytes() for a, b in zip(once, twice))
        assert once == twice

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 30))
    def test_feed_from_corpus_has_unique_ids(self, seed, n):
        rng = np.random.default_rng(seed)
        corpus = validate_corpus(random_items(rng, n), 4)
        user = UserProfile("u", unit(rng.standard_normal(4)))
        pick = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        feed = Feed(user, tuple(corpus[i] for i in pick))
        ids = [it.id for it in feed.items]
        assert len(ids) == len(set(ids))


class TestItemAndUser:
    def test_embedding_read_only(self):
        it = _item(0, unit([1, 0]))
        with pytest.raises(ValueError):
            it.embedding[0] = 2.0

    def test_item_round_trip(self):
        it = _item(3, unit([0.3, -0.4, 0.5]), topic=2, score=0.25)
        assert Item.from_dict(json.loads(json.dumps(it.to_dict()))) == it

    def test_malformed_item_record(self):
        with pytest.raises(InvalidItem):
            Item.from_dict({"id": "x", "topic": 0})

    def test_user_needs_unit_norm(self):
        with pytest.raises(DegenerateEmbedding):
            UserProfile("u", [2.0, 0.0])

    def test_serving_drops_sensitivity(self):
        d = {"id": "u", "interest_embedding": [1.0, 0.0], "diversity_sensitivity": 3.0}
        assert UserProfile.from_dict(d).diversity_sensitivity == 3.0
        assert UserProfile.from_dict(d, serving=True).diversity_sensitivity == 0.0


class TestFeed:
    def test_sorted_by_main_score(self):
        rng = np.random.default_rng(1)
        items = random_items(rng, 6)
        user = UserProfile("u", unit([1, 0, 0, 0]))
        feed = Feed(user, tuple(reversed(items)))
        assert [it.id for it in feed.items] == [it.id for it in items]

    def test_ties_keep_input_order(self):
        e = unit([1, 0])
        items = (Item("a", e, 0, 0.5), Item("b", e, 0, 0.9), Item("c", e, 0, 0.5))
        feed = Feed(UserProfile("u", e), items)
        assert [it.id for it in feed.items] == ["b", "a", "c"]

    def test_duplicate_rejected(self):
        e = unit([1, 0])
        with pytest.raises(DuplicateId):
            Feed(UserProfile("u", e), (Item("a", e, 0, 0.5), Item("a", e, 0, 0.4)))

    def test_context_window(self):
        items = random_items(np.random.default_rng(2), 7)
        ctx = FeedContext(tuple(items), k=5)
        assert ctx.window() == tuple(items[2:])
        assert ctx.window(2) == tuple(items[5:])
        assert FeedContext().window() == ()


def _impression(sid, pos, day=0):
    return Impression(sid, day, "u", f"i{pos}", pos, [0.1, 0.5, 1.0], [0.0] * 10, [1, 0], 0.0)


class TestSessionLog:
    def test_matrices_shapes(self):
        log = SessionLog([_impression(0, p) for p in range(3)])
        X, Y, sim, day = log.matrices("contextual")
        assert X.shape == (3, 13) and Y.shape == (3, 2)
        assert log.matrices("baseline")[0].shape == (3, 3)

    def test_empty_log(self):
        with pytest.raises(EmptyLog):
            SessionLog([]).matrices()

    def test_positions_must_be_contiguous(self):
        log = SessionLog([_impression(0, 0), _impression(0, 2)])
        with pytest.raises(InvalidItem):
            log.check_positions()

    def test_round_trip(self, tmp_path):
        log = SessionLog([_impression(0, p, day=p) for p in range(4)])
        save_log(tmp_path / "log.jsonl", log)
        back = load_log(tmp_path / "log.jsonl")
        for a, b in zip(log.impressions, back.impressions):
            assert a.to_dict() == b.to_dict()
        assert back.subset([1, 2]).days() == [1, 2]

    def test_corpus_round_trip(self, tmp_path):
        items = random_items(np.random.default_rng(3), 5)
        save_corpus(tmp_path / "items.jsonl", items)
        assert load_corpus(tmp_path / "items.jsonl", 4) == items

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(ArtifactIOError, match="nope.jsonl"):
            read_jsonl(tmp_path / "nope.jsonl")
