"""Core data types: items, users, feeds, logged impressions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ArtifactIOError,
    DegenerateEmbedding,
    DimensionMismatch,
    DuplicateId,
    EmptyLog,
    InvalidItem,
)

UNIT_TOL = 1e-6
RENORM_TOL = 1e-3
# Vectors closer than this to unit norm are left untouched so that
# re-validating a corpus is a bitwise no-op.
_EXACT_TOL = 1e-9


def _frozen_vector(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Item:
    id: str
    embedding: np.ndarray
    topic: int
    main_score: float

    def __post_init__(self):
        object.__setattr__(self, "embedding", _frozen_vector(self.embedding))

    def __eq__(self, other):
        if not isinstance(other, Item):
            return NotImplemented
        return (
            self.id == other.id
            and self.topic == other.topic
            and self.main_score == other.main_score
            and self.embedding.shape == other.embedding.shape
            and self.embedding.tobytes() == other.embedding.tobytes()
        )

    def __hash__(self):
        return hash(self.id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "embedding": self.embedding.tolist(),
            "topic": self.topic,
            "main_score": self.main_score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Item":
        try:
            return cls(
                id=str(d["id"]),
                embedding=d["embedding"],
                topic=int(d["topic"]),
                main_score=float(d["main_score"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidItem(f"malformed item record: {exc}") from exc


@dataclass(frozen=True, eq=False)
class UserProfile:
    id: str
    interest_embedding: np.ndarray
    # Simulator ground truth. Serving code must never read it.
    diversity_sensitivity: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "interest_embedding", _frozen_vector(self.interest_embedding)
        )
        norm = float(np.linalg.norm(self.interest_embedding))
        if abs(norm - 1.0) > UNIT_TOL:
            raise DegenerateEmbedding(
                f"user {self.id!r}: interest embedding norm {norm:.6g} is not 1"
            )
        if self.diversity_sensitivity < 0:
            raise InvalidItem(f"user {self.id!r}: diversity_sensitivity < 0")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "interest_embedding": self.interest_embedding.tolist(),
            "diversity_sensitivity": self.diversity_sensitivity,
        }

    @classmethod
    def from_dict(cls, d: dict, *, serving: bool = False) -> "UserProfile":
        """Build a profile; with ``serving=True`` any ground-truth field is dropped."""
        try:
            vec = np.asarray(d["interest_embedding"], dtype=np.float64)
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise DegenerateEmbedding(f"user {d.get('id')!r}: zero interest vector")
            if abs(norm - 1.0) > _EXACT_TOL and abs(norm - 1.0) <= RENORM_TOL:
                vec = vec / norm
            beta = 0.0 if serving else float(d.get("diversity_sensitivity", 0.0))
            return cls(id=str(d["id"]), interest_embedding=vec, diversity_sensitivity=beta)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DegenerateEmbedding):
                raise
            raise InvalidItem(f"malformed user record: {exc}") from exc


@dataclass(frozen=True)
class Feed:
    """Candidates for one user, kept in descending main-pass score order."""

    user: UserProfile
    items: tuple

    def __post_init__(self):
        ordered = sorted(self.items, key=lambda it: -it.main_score)
        ids = [it.id for it in ordered]
        if len(set(ids)) != len(ids):
            seen, dup = set(), None
            for i in ids:
                if i in seen:
                    dup = i
                    break
                seen.add(i)
            raise DuplicateId(f"duplicate item id in feed: {dup!r}")
        object.__setattr__(self, "items", tuple(ordered))

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class FeedContext:
    """Items already slotted above the current position, most recent last."""

    prefix: tuple = ()
    k: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("context depth k must be >= 1")
        object.__setattr__(self, "prefix", tuple(self.prefix))

    def window(self, k: int | None = None) -> tuple:
        depth = self.k if k is None else k
        return self.prefix[-depth:] if self.prefix else ()

    def __len__(self):
        return len(self.prefix)


def validate_corpus(items: Iterable[Item], dimension: int) -> list[Item]:
    """Check item invariants, renormalizing embeddings that are nearly unit length.

    Raises DimensionMismatch, DegenerateEmbedding, DuplicateId or InvalidItem.
    """
    if dimension < 1:
        raise DimensionMismatch("dimension must be positive")
    out = []
    seen = set()
    for it in items:
        emb = it.embedding
        if emb.ndim != 1 or emb.shape[0] != dimension:
            raise DimensionMismatch(
                f"item {it.id!r}: embedding length {emb.size} != {dimension}"
            )
        if not np.all(np.isfinite(emb)):
            raise DegenerateEmbedding(f"item {it.id!r}: non-finite embedding")
        norm = float(np.linalg.norm(emb))
        if norm == 0.0:
            raise DegenerateEmbedding(f"item {it.id!r}: zero embedding")
        if abs(norm - 1.0) > RENORM_TOL:
            raise DegenerateEmbedding(
                f"item {it.id!r}: embedding norm {norm:.6g} too far from 1"
            )
        if abs(norm - 1.0) > _EXACT_TOL:
            it = replace(it, embedding=emb / norm)
        if not (0.0 <= it.main_score <= 1.0) or math.isnan(it.main_score):
            raise InvalidItem(f"item {it.id!r}: main_score {it.main_score} outside [0, 1]")
        if it.topic < 0:
            raise InvalidItem(f"item {it.id!r}: negative topic")
        if it.id in seen:
            raise DuplicateId(f"duplicate item id: {it.id!r}")
        seen.add(it.id)
        out.append(it)
    return out


@dataclass(frozen=True, eq=False)
class Impression:
    session_id: int
    day: int
    user_id: str
    item_id: str
    position: int
    pointwise: np.ndarray
    contextual: np.ndarray
    labels: tuple
    similarity_score: float

    def __post_init__(self):
        object.__setattr__(self, "pointwise", _frozen_vector(self.pointwise))
        object.__setattr__(self, "contextual", _frozen_vector(self.contextual))
        object.__setattr__(self, "labels", tuple(int(y) for y in self.labels))

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "day": self.day,
            "user_id": self.user_id,
            "item_id": self.item_id,
            "position": self.position,
            "pointwise": self.pointwise.tolist(),
            "contextual": self.contextual.tolist(),
            "labels": list(self.labels),
            "similarity_score": self.similarity_score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Impression":
        return cls(
            session_id=int(d["session_id"]),
            day=int(d["day"]),
            user_id=str(d["user_id"]),
            item_id=str(d["item_id"]),
            position=int(d["position"]),
            pointwise=d["pointwise"],
            contextual=d["contextual"],
            labels=d["labels"],
            similarity_score=float(d["similarity_score"]),
        )


@dataclass
class SessionLog:
    impressions: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.impressions)

    @property
    def task_count(self) -> int:
        return len(self.impressions[0].labels) if self.impressions else 0

    def days(self) -> list[int]:
        return sorted({imp.day for imp in self.impressions})

    def subset(self, days: Sequence[int]) -> "SessionLog":
        keep = set(days)
        return SessionLog([i for i in self.impressions if i.day in keep], dict(self.metadata))

    def matrices(self, mode: str = "contextual"):
        """Return (X, Y, similarity, day) arrays in log order.

        X holds the point-wise block, followed by the contextual block when
        ``mode == "contextual"``.
        """
        if not self.impressions:
            raise EmptyLog("session log has no impressions")
        pw = np.array([i.pointwise for i in self.impressions], dtype=np.float64)
        if mode == "contextual":
            ctx = np.array([i.contextual for i in self.impressions], dtype=np.float64)
            X = np.hstack([pw, ctx])
        elif mode == "baseline":
            X = pw
        else:
            raise ValueError(f"unknown feature mode {mode!r}")
        Y = np.array([i.labels for i in self.impressions], dtype=np.float64)
        sim = np.array([i.similarity_score for i in self.impressions], dtype=np.float64)
        day = np.array([i.day for i in self.impressions], dtype=np.int64)
        return X, Y, sim, day

    def check_positions(self) -> None:
        by_session: dict[int, list[int]] = {}
        for imp in self.impressions:
            by_session.setdefault(imp.session_id, []).append(imp.position)
        for sid, pos in by_session.items():
            if sorted(pos) != list(range(len(pos))):
                raise InvalidItem(f"session {sid}: positions not contiguous from 0")


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_jsonl(path, records: Iterable[dict]) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(_dumps(rec))
                fh.write("\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror}") from exc


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc.strerror}") from exc
    out = []
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InvalidItem(f"{path}:{n}: invalid JSON ({exc.msg})") from exc
    return out


def save_corpus(path, items: Iterable[Item]) -> None:
    write_jsonl(path, (it.to_dict() for it in items))


def load_corpus(path, dimension: int) -> list[Item]:
    return validate_corpus((Item.from_dict(d) for d in read_jsonl(path)), dimension)


def save_users(path, users: Iterable[UserProfile]) -> None:
    write_jsonl(path, (u.to_dict() for u in users))


def load_users(path, dimension: int) -> list[UserProfile]:
    users = [UserProfile.from_dict(d) for d in read_jsonl(path)]
    for u in users:
        if u.interest_embedding.shape[0] != dimension:
            raise DimensionMismatch(f"user {u.id!r}: interest length != {dimension}")
    return users


def save_log(path, log: SessionLog) -> None:
    write_jsonl(path, (imp.to_dict() for imp in log.impressions))


def load_log(path, metadata: dict | None = None) -> SessionLog:
    try:
        imps = [Impression.from_dict(d) for d in read_jsonl(path)]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidItem):
            raise
        raise InvalidItem(f"{path}: malformed impression ({exc})") from exc
    return SessionLog(imps, dict(metadata or {}))
