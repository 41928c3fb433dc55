"""Line-delimited JSON re-ranking service with per-session paging.

Each input line is one request::

    {"req_id": "r1", "session_id": "s1",
     "user": {"id": "u1", "interest_embedding": [...]},
     "candidates": [{"id": ..., "embedding": [...], "topic": 0, "main_score": 0.7}, ...],
     "page_size": 5, "params": {"window": 4}}

A request that carries ``candidates`` starts (or restarts) the session; one
without continues it with the next page. Each request gets exactly one
response line, in input order::

    {"req_id": "r1", "order": [...], "scores": [...], "session_done": false}

Bad requests produce ``{"req_id": ..., "error": "..."}`` and the loop goes on.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from typing import IO

from .domain import Feed, Item, UserProfile, validate_corpus
from .errors import CtxRankError, DimensionMismatch, InvalidItem, SessionExhausted
from .features import FeatureConfig
from .model import ScorerModel
from .reranker import RerankParams, SessionState, new_session, rerank_page

log = logging.getLogger(__name__)


class RequestError(CtxRankError):
    pass


class RerankService:
    def __init__(self, model: ScorerModel, params: RerankParams = RerankParams(),
                 objective_task: int = 0, idle_limit: int = 1000):
        if model.feature_mode != "contextual":
            raise RequestError("service needs a contextual-mode model")
        self.model = model
        self.params = params
        self.objective_task = objective_task
        self.idle_limit = idle_limit
        self.num_topics = int(model.meta.get("num_topics", model.input_dim - 12))
        self.dim = model.meta.get("dim")
        self._sessions: dict[str, tuple[SessionState, RerankParams]] = {}
        self._last_seen: dict[str, int] = {}
        self._tick = 0

    @property
    def active_sessions(self) -> int:
        return len(self._sessions)

    def _params(self, overrides) -> RerankParams:
        if overrides is None:
            return self.params
        if not isinstance(overrides, dict):
            raise RequestError("params must be an object")
        allowed = {f.name for f in dataclasses.fields(RerankParams)}
        bad = set(overrides) - allowed
        if bad:
            raise RequestError(f"unknown params: {', '.join(sorted(bad))}")
        try:
            return dataclasses.replace(self.params, **overrides)
        except (TypeError, ValueError) as exc:
            raise RequestError(f"bad params: {exc}") from exc

    def _start(self, req: dict, params: RerankParams) -> SessionState:
        if "user" not in req or not isinstance(req["user"], dict):
            raise RequestError("new session needs a user object")
        user = UserProfile.from_dict(req["user"], serving=True)
        dim = user.interest_embedding.shape[0]
        if self.dim is not None and dim != self.dim:
            raise DimensionMismatch(f"user embedding length {dim} != model dimension {self.dim}")
        cands = req["candidates"]
        if not isinstance(cands, list) or not cands:
            raise RequestError("candidates must be a nonempty list")
        items = validate_corpus([Item.from_dict(c) for c in cands], dim)
        return new_session(Feed(user, tuple(items)))

    def _expire(self):
        stale = [s for s, t in self._last_seen.items() if self._tick - t > self.idle_limit]
        for s in stale:
            self._sessions.pop(s, None)
            self._last_seen.pop(s, None)

    def handle(self, req: dict) -> dict:
        self._tick += 1
        req_id = req.get("req_id") if isinstance(req, dict) else None
        try:
            if not isinstance(req, dict):
                raise RequestError("request must be a JSON object")
            sid = req.get("session_id")
            if not isinstance(sid, str):
                raise RequestError("session_id must be a string")
            params = self._params(req.get("params"))
            if "candidates" in req:
                state = self._start(req, params)
            elif sid in self._sessions:
                state, stored = self._sessions[sid]
                if "params" not in req:
                    params = stored
            else:
                raise SessionExhausted(f"unknown or finished session {sid!r}")
            page_size = req.get("page_size")
            if page_size is not None and (not isinstance(page_size, int) or page_size < 1):
                raise RequestError("page_size must be a positive integer")
            cfg = FeatureConfig(context_depth=params.context_depth, num_topics=self.num_topics)
            page, state = rerank_page(state, self.model, params, cfg, self.objective_task, page_size)
            if state.done:
                self._sessions.pop(sid, None)
                self._last_seen.pop(sid, None)
            else:
                self._sessions[sid] = (state, params)
                self._last_seen[sid] = self._tick
            return {"req_id": req_id, "order": page.ids, "scores": page.scores,
                    "session_done": state.done}
        except (CtxRankError, KeyError, TypeError, ValueError) as exc:
            msg = f"{type(exc).__name__}: {exc}"
            log.debug("request %r failed: %s", req_id, msg)
            return {"req_id": req_id if isinstance(req_id, str) else None, "error": msg}
        finally:
            self._expire()

    def handle_line(self, line: str) -> dict:
        try:
            req = json.loads(line)
        except json.JSONDecodeError as exc:
            self._tick += 1
            return {"req_id": None, "error": f"malformed JSON: {exc.msg}"}
        return self.handle(req)

    def serve(self, instream: IO[str], outstream: IO[str]) -> int:
        """Answer requests until EOF; returns the number of requests handled."""
        n = 0
        for line in instream:
            if not line.strip():
                continue
            resp = self.handle_line(line)
            outstream.write(json.dumps(resp, separators=(",", ":")) + "\n")
            outstream.flush()
            n += 1
        return n
