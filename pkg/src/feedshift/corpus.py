"""Event-log data model: posts, engagements, timelines, period splits.

The on-disk format is JSON-Lines with a ``"type"`` discriminator
(``"post"`` or ``"engagement"``), optionally gzip-compressed.  Stores
are canonically ordered so that ingestion is insensitive to input line
order and shard scheduling: posts sort by (author_id, timestamp,
post_id) and engagements by (user_id, timestamp, kind, feed_id,
target_post_id).
"""

from __future__ import annotations

import gzip
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

SECONDS_PER_DAY = 86400


class CorpusError(Exception):
    """Raised for malformed event logs in strict mode and bad stores."""


class EngagementKind(str, Enum):
    """The six engagement actions that define treatment."""

    POST = "post"
    COMMENT = "comment"
    QUOTE = "quote"
    REPOST = "repost"
    LIKE = "like"
    BOOKMARK = "bookmark"

    @property
    def order(self) -> int:
        return _KIND_ORDER[self]


_KIND_ORDER = {k: i for i, k in enumerate(EngagementKind)}


@dataclass(frozen=True)
class PostRecord:
    """One authored post. Timestamps are integral UTC seconds."""

    post_id: str
    author_id: str
    timestamp: int
    text: str
    language_tag: str | None = None


@dataclass(frozen=True)
class EngagementRecord:
    """One engagement action by a user on a feed."""

    user_id: str
    feed_id: str
    kind: EngagementKind
    timestamp: int
    target_post_id: str | None = None


@dataclass
class UserTimeline:
    """All posts authored by one user, time-ordered.

    ``first_seen``/``last_seen`` span the user's full observed activity,
    posts and engagements alike; baseline spans are measured from
    ``first_seen``.
    """

    user_id: str
    posts: list[PostRecord]
    first_seen: int
    last_seen: int


@dataclass
class PeriodSplit:
    """Partition of a timeline at an anchor.

    Baseline holds posts strictly before the anchor; posts exactly at
    the anchor belong to the post-exposure period.
    """

    anchor: int
    baseline: list[PostRecord]
    post_exposure: list[PostRecord]


@dataclass
class RejectedLine:
    line_no: int
    reason: str


@dataclass
class IngestReport:
    n_accepted: int = 0
    n_rejected: int = 0
    rejects: list[RejectedLine] = field(default_factory=list)


_POST_FIELDS = ("post_id", "author_id", "timestamp", "text")
_ENGAGEMENT_FIELDS = ("user_id", "feed_id", "kind", "timestamp")


def _coerce_timestamp(value: object) -> int:
    """Validate and truncate a timestamp to integral UTC seconds."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError("timestamp must be a number")
    ts = float(value)
    if not math.isfinite(ts) or ts < 0:
        raise ValueError("timestamp must be finite and non-negative")
    return int(ts)


class EventStore:
    """Immutable-after-build index of posts and engagements.

    Construction canonicalises ordering, so two stores built from the
    same records in any order compare equal and serialize identically.
    """

    def __init__(
        self,
        posts: Iterable[PostRecord],
        engagements: Iterable[EngagementRecord],
    ) -> None:
        post_list = sorted(posts, key=lambda p: (p.author_id, p.timestamp, p.post_id))
        seen: set[str] = set()
        for p in post_list:
            if p.post_id in seen:
                raise CorpusError(f"duplicate post_id: {p.post_id}")
            seen.add(p.post_id)
        eng_list = sorted(
            engagements,
            key=lambda e: (
                e.user_id,
                e.timestamp,
                e.kind.order,
                e.feed_id,
                e.target_post_id or "",
            ),
        )
        self._posts = post_list
        self._engagements = eng_list
        self._posts_by_user: dict[str, list[PostRecord]] = {}
        for p in post_list:
            self._posts_by_user.setdefault(p.author_id, []).append(p)
        self._posts_by_id = {p.post_id: p for p in post_list}
        self._eng_by_user: dict[str, list[EngagementRecord]] = {}
        self._eng_by_feed: dict[str, list[EngagementRecord]] = {}
        for e in eng_list:
            self._eng_by_user.setdefault(e.user_id, []).append(e)
            self._eng_by_feed.setdefault(e.feed_id, []).append(e)

    # -- queries ---------------------------------------------------------

    @property
    def posts(self) -> list[PostRecord]:
        return self._posts

    @property
    def engagements(self) -> list[EngagementRecord]:
        return self._engagements

    def users(self) -> list[str]:
        """All user ids appearing as authors or engagers, sorted."""
        return sorted(set(self._posts_by_user) | set(self._eng_by_user))

    def feeds(self) -> list[str]:
        return sorted(self._eng_by_feed)

    def posts_of(self, user_id: str) -> list[PostRecord]:
        return self._posts_by_user.get(user_id, [])

    def post(self, post_id: str) -> PostRecord | None:
        return self._posts_by_id.get(post_id)

    def engagements_of(self, user_id: str) -> list[EngagementRecord]:
        return self._eng_by_user.get(user_id, [])

    def engagements_on(self, feed_id: str) -> list[EngagementRecord]:
        return self._eng_by_feed.get(feed_id, [])

    def timeline(self, user_id: str) -> UserTimeline:
        posts = sorted(
            self._posts_by_user.get(user_id, []),
            key=lambda p: (p.timestamp, p.post_id),
        )
        stamps = [p.timestamp for p in posts]
        stamps.extend(e.timestamp for e in self._eng_by_user.get(user_id, ()))
        if not stamps:
            raise CorpusError(f"unknown user: {user_id}")
        return UserTimeline(
            user_id=user_id,
            posts=posts,
            first_seen=min(stamps),
            last_seen=max(stamps),
        )

    def feed_posts(self, feed_id: str) -> list[PostRecord]:
        """Posts surfaced by a feed: distinct targets of its engagements."""
        target_ids = {
            e.target_post_id
            for e in self._eng_by_feed.get(feed_id, ())
            if e.target_post_id is not None
        }
        found = [self._posts_by_id[t] for t in target_ids if t in self._posts_by_id]
        return sorted(found, key=lambda p: p.post_id)

    def span(self) -> tuple[int, int]:
        """(min, max) timestamp over all records."""
        stamps = [p.timestamp for p in self._posts]
        stamps.extend(e.timestamp for e in self._engagements)
        if not stamps:
            raise CorpusError("empty store has no span")
        return min(stamps), max(stamps)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStore):
            return NotImplemented
        return self._posts == other._posts and self._engagements == other._engagements

    # -- serialization ---------------------------------------------------

    def _post_obj(self, p: PostRecord) -> dict:
        obj: dict = {
            "type": "post",
            "post_id": p.post_id,
            "author_id": p.author_id,
            "timestamp": p.timestamp,
            "text": p.text,
        }
        if p.language_tag is not None:
            obj["language_tag"] = p.language_tag
        return obj

    def _eng_obj(self, e: EngagementRecord) -> dict:
        obj: dict = {
            "type": "engagement",
            "user_id": e.user_id,
            "feed_id": e.feed_id,
            "kind": e.kind.value,
            "timestamp": e.timestamp,
        }
        if e.target_post_id is not None:
            obj["target_post_id"] = e.target_post_id
        return obj

    def save(self, directory: str | Path) -> Path:
        """Write the canonical store: one file per record class + manifest."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        digest = hashlib.sha256()
        for name, objs in (
            ("posts.jsonl", map(self._post_obj, self._posts)),
            ("engagements.jsonl", map(self._eng_obj, self._engagements)),
        ):
            payload = "".join(
                json.dumps(o, sort_keys=True, separators=(",", ":")) + "\n"
                for o in objs
            ).encode("utf-8")
            (out / name).write_bytes(payload)
            digest.update(payload)
        manifest = {
            "record_counts": {
                "post": len(self._posts),
                "engagement": len(self._engagements),
            },
            "content_hash": digest.hexdigest(),
        }
        (out / "store.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        return out

    @classmethod
    def load(cls, directory: str | Path) -> "EventStore":
        src = Path(directory)
        manifest = json.loads((src / "store.json").read_text(encoding="utf-8"))
        lines: list[str] = []
        digest = hashlib.sha256()
        for name in ("posts.jsonl", "engagements.jsonl"):
            payload = (src / name).read_bytes()
            digest.update(payload)
            lines.extend(payload.decode("utf-8").splitlines())
        if digest.hexdigest() != manifest["content_hash"]:
            raise CorpusError(f"store content hash mismatch in {src}")
        store, report = ingest_events(lines, strict=True)
        if report.n_rejected:
            raise CorpusError(f"corrupt store in {src}")
        return store


def _parse_line(obj: dict) -> PostRecord | EngagementRecord:
    rec_type = obj.get("type")
    if rec_type == "post":
        for f in _POST_FIELDS:
            if f not in obj:
                raise ValueError(f"missing field: {f}")
        return PostRecord(
            post_id=str(obj["post_id"]),
            author_id=str(obj["author_id"]),
            timestamp=_coerce_timestamp(obj["timestamp"]),
            text=str(obj["text"]),
            language_tag=(
                str(obj["language_tag"]) if obj.get("language_tag") is not None else None
            ),
        )
    if rec_type == "engagement":
        for f in _ENGAGEMENT_FIELDS:
            if f not in obj:
                raise ValueError(f"missing field: {f}")
        try:
            kind = EngagementKind(obj["kind"])
        except ValueError:
            raise ValueError(f"invalid kind: {obj['kind']}") from None
        return EngagementRecord(
            user_id=str(obj["user_id"]),
            feed_id=str(obj["feed_id"]),
            kind=kind,
            timestamp=_coerce_timestamp(obj["timestamp"]),
            target_post_id=(
                str(obj["target_post_id"])
                if obj.get("target_post_id") is not None
                else None
            ),
        )
    raise ValueError(f"unknown record type: {rec_type!r}")


def ingest_events(
    line_stream: Iterable[str], strict: bool = False
) -> tuple[EventStore, IngestReport]:
    """Parse a JSON-Lines event stream into a canonical EventStore.

    In lenient mode (default) malformed lines are recorded in the
    report with their line number and reason and ingestion continues;
    in strict mode the first bad line raises :class:`CorpusError`.
    Duplicate post ids are rejected at the line level.
    """
    posts: list[PostRecord] = []
    engagements: list[EngagementRecord] = []
    seen_posts: set[str] = set()
    report = IngestReport()
    for line_no, line in enumerate(line_stream, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped)
            if not isinstance(obj, dict):
                raise ValueError("line is not a JSON object")
            record = _parse_line(obj)
            if isinstance(record, PostRecord):
                if record.post_id in seen_posts:
                    raise ValueError(f"duplicate post_id: {record.post_id}")
                seen_posts.add(record.post_id)
                posts.append(record)
            else:
                engagements.append(record)
            report.n_accepted += 1
        except (json.JSONDecodeError, ValueError) as exc:
            reason = "invalid JSON" if isinstance(exc, json.JSONDecodeError) else str(exc)
            if strict:
                raise CorpusError(f"line {line_no}: {reason}") from exc
            report.n_rejected += 1
            report.rejects.append(RejectedLine(line_no=line_no, reason=reason))
    return EventStore(posts, engagements), report


def iter_event_lines(paths: Sequence[str | Path]) -> Iterator[str]:
    """Stream lines from .jsonl files, transparently decompressing .gz."""
    for path in paths:
        p = Path(path)
        opener = gzip.open if p.suffix == ".gz" else open
        with opener(p, "rt", encoding="utf-8") as handle:  # type: ignore[operator]
            yield from handle


def split_periods(timeline: UserTimeline, anchor: int) -> PeriodSplit:
    """Partition a timeline's posts at the anchor (strictly-before rule)."""
    if not math.isfinite(anchor):
        raise ValueError("anchor must be finite")
    baseline = [p for p in timeline.posts if p.timestamp < anchor]
    post = [p for p in timeline.posts if p.timestamp >= anchor]
    return PeriodSplit(anchor=anchor, baseline=baseline, post_exposure=post)


@dataclass
class LanguageFilterStats:
    n_kept: int = 0
    n_dropped_other_tag: int = 0
    n_dropped_untagged: int = 0


def filter_language(
    posts: Sequence[PostRecord],
    tag: str,
    detector: Callable[[str], str] | None = None,
) -> tuple[list[PostRecord], LanguageFilterStats]:
    """Keep posts whose language tag equals ``tag``.

    Untagged posts are passed to ``detector`` when one is configured;
    without a detector they are dropped and counted separately from
    tag mismatches.
    """
    if not tag:
        raise ValueError("language tag must be non-empty")
    kept: list[PostRecord] = []
    stats = LanguageFilterStats()
    for p in posts:
        post_tag = p.language_tag
        if post_tag is None:
            if detector is None:
                stats.n_dropped_untagged += 1
                continue
            post_tag = detector(p.text)
        if post_tag == tag:
            kept.append(p)
            stats.n_kept += 1
        else:
            stats.n_dropped_other_tag += 1
    return kept, stats
