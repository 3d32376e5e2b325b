"""Record parsing, hashtag merging and construction of the daily bipartite graphs."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import IO, Iterable, Mapping, Sequence

from .bigraph import BipartiteGraph

logger = logging.getLogger(__name__)

__all__ = [
    "TaggedRecord",
    "RecordError",
    "ParseReport",
    "MergeMap",
    "parse_records",
    "extract_hashtags",
    "normalize_hashtag",
    "edit_distance",
    "within_distance",
    "build_merge_map",
    "hashtag_counts",
    "build_daily_hashtag_graphs",
    "build_retweet_graph",
]

_HASHTAG_RE = re.compile(r"#(\w+)")
_TRUE = {"true", "1", "yes", "t", "y"}
_FALSE = {"false", "0", "no", "f", "n", ""}


class RecordError(ValueError):
    """A malformed input line."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.message = message


@dataclass(frozen=True)
class TaggedRecord:
    message_id: str
    author_id: str
    author_verified: bool
    timestamp: dt.datetime
    hashtags: tuple[str, ...] = ()
    retweeted_author_id: str | None = None
    retweeted_author_verified: bool | None = None

    def __post_init__(self):
        if not self.message_id:
            raise ValueError("message_id must be nonempty")
        if not self.author_id:
            raise ValueError("author_id must be nonempty")
        for h in self.hashtags:
            if not h or "#" in h or any(c.isspace() for c in h):
                raise ValueError(f"invalid hashtag {h!r}")
        if (self.retweeted_author_id is None) != (self.retweeted_author_verified is None):
            raise ValueError("retweeted author id and verified flag must be given together")
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware")

    @property
    def day(self) -> dt.date:
        return self.timestamp.astimezone(dt.timezone.utc).date()

    def to_json(self) -> dict:
        out = {
            "id": self.message_id,
            "user_id": self.author_id,
            "verified": self.author_verified,
            "created_at": self.timestamp.astimezone(dt.timezone.utc).isoformat().replace("+00:00", "Z"),
            "hashtags": list(self.hashtags),
        }
        if self.retweeted_author_id is not None:
            out["rt_user_id"] = self.retweeted_author_id
            out["rt_verified"] = self.retweeted_author_verified
        return out


@dataclass
class ParseReport:
    records: list[TaggedRecord] = field(default_factory=list)
    errors: list[RecordError] = field(default_factory=list)


def normalize_hashtag(raw: str) -> str:
    return raw.strip().lstrip("#").casefold()


def extract_hashtags(text: str) -> list[str]:
    """Hashtags in ``text``, case-folded, in order of first appearance."""
    seen = {}
    for m in _HASHTAG_RE.finditer(text):
        seen.setdefault(m.group(1).casefold(), None)
    return list(seen)


def _parse_bool(value, name: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)) and value in (0, 1):
        return bool(value)
    if isinstance(value, str) and value.strip().lower() in _TRUE | _FALSE:
        return value.strip().lower() in _TRUE
    raise ValueError(f"field {name!r} is not a boolean: {value!r}")


def _parse_time(value) -> dt.datetime:
    if not isinstance(value, str) or not value:
        raise ValueError("missing created_at")
    s = value.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = dt.datetime.fromisoformat(s)
    if ts.tzinfo is None:
        raise ValueError(f"created_at lacks a UTC offset: {value!r}")
    return ts.astimezone(dt.timezone.utc)


def _record_from_fields(obj: Mapping) -> TaggedRecord:
    def text_field(name, required=True):
        v = obj.get(name)
        if v is None or (isinstance(v, str) and not v.strip()):
            if required:
                raise ValueError(f"missing {name}")
            return None
        return str(v).strip()

    message_id = text_field("id")
    user_id = text_field("user_id")
    if "verified" not in obj:
        raise ValueError("missing verified")
    verified = _parse_bool(obj["verified"], "verified")
    ts = _parse_time(obj.get("created_at"))

    tags = obj.get("hashtags")
    if isinstance(tags, str):
        # CSV cells carry hashtags as a space/comma separated string
        tags = [t for t in re.split(r"[\s,;|]+", tags) if t]
    if tags is None or (isinstance(tags, list) and not tags and obj.get("text")):
        hashtags = extract_hashtags(str(obj.get("text") or ""))
    elif isinstance(tags, list):
        hashtags = []
        for t in tags:
            if not isinstance(t, str):
                raise ValueError(f"hashtag is not a string: {t!r}")
            h = normalize_hashtag(t)
            if not h or any(c.isspace() or c == "#" for c in h):
                raise ValueError(f"invalid hashtag {t!r}")
            if h not in hashtags:
                hashtags.append(h)
    else:
        raise ValueError(f"hashtags must be an array, got {type(tags).__name__}")

    rt_user = text_field("rt_user_id", required=False)
    rt_raw = obj.get("rt_verified")
    rt_verified = None if rt_raw is None or rt_raw == "" else _parse_bool(rt_raw, "rt_verified")
    if (rt_user is None) != (rt_verified is None):
        raise ValueError("rt_user_id and rt_verified must be given together")
    return TaggedRecord(message_id, user_id, verified, ts, tuple(hashtags), rt_user, rt_verified)


def parse_records(
    stream: IO[bytes] | IO[str] | bytes | str,
    format: str = "jsonl",
    strict: bool = True,
) -> ParseReport:
    """Parse JSONL or CSV records.

    In strict mode the first malformed line raises :class:`RecordError`;
    otherwise bad lines are skipped and collected in ``ParseReport.errors``.
    Duplicate message ids count as malformed.
    """
    if isinstance(stream, bytes):
        text = stream.decode("utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        data = stream.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    if format == "jsonl":
        rows = _jsonl_rows(text)
    elif format == "csv":
        rows = _csv_rows(text)
    else:
        raise ValueError(f"unknown format {format!r}")

    report = ParseReport()
    seen_ids = set()
    for line_no, row in rows:
        try:
            if isinstance(row, Exception):
                raise row
            rec = _record_from_fields(row)
            if rec.message_id in seen_ids:
                raise ValueError(f"duplicate id {rec.message_id!r}")
        except ValueError as exc:
            err = RecordError(line_no, str(exc))
            if strict:
                raise err from exc
            logger.warning("skipping %s", err)
            report.errors.append(err)
            continue
        seen_ids.add(rec.message_id)
        report.records.append(rec)
    return report


def _jsonl_rows(text: str):
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            yield line_no, ValueError(f"invalid JSON: {exc.msg}")
            continue
        if not isinstance(obj, dict):
            yield line_no, ValueError("line is not a JSON object")
            continue
        yield line_no, obj


def _csv_rows(text: str):
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        # header is line 1
        yield reader.line_num, row


# --- hashtag merging -------------------------------------------------------


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit-cost insertion, deletion and substitution."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def within_distance(a: str, b: str, k: int) -> bool:
    """True iff ``edit_distance(a, b) <= k``, evaluated on a band of width 2k+1."""
    if abs(len(a) - len(b)) > k:
        return False
    if a == b:
        return True
    big = k + 1
    n, m = len(a), len(b)
    prev = [j if j <= k else big for j in range(m + 1)]
    for i in range(1, n + 1):
        lo, hi = max(1, i - k), min(m, i + k)
        cur = [big] * (m + 1)
        if i <= k:
            cur[0] = i
        ca = a[i - 1]
        best = cur[0]
        for j in range(lo, hi + 1):
            v = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != b[j - 1]))
            cur[j] = v if v < big else big
            best = min(best, cur[j])
        if best > k:
            return False
        prev = cur
    return prev[m] <= k


def _deletion_keys(s: str, k: int) -> set[str]:
    keys = {s}
    frontier = {s}
    for _ in range(k):
        nxt = set()
        for w in frontier:
            for i in range(len(w)):
                nxt.add(w[:i] + w[i + 1:])
        keys |= nxt
        frontier = nxt
    return keys


@dataclass(frozen=True)
class MergeMap:
    """Raw hashtag -> canonical hashtag, plus merged frequencies of canonical forms."""

    canonical: dict[str, str]
    frequencies: dict[str, int]

    def __call__(self, tag: str) -> str:
        return self.canonical.get(tag, tag)

    def apply(self, tags: Iterable[str]) -> tuple[str, ...]:
        out = {}
        for t in tags:
            out.setdefault(self(t), None)
        return tuple(out)

    def to_json(self) -> dict:
        return {
            "canonical": dict(sorted(self.canonical.items())),
            "frequencies": dict(sorted(self.frequencies.items())),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "MergeMap":
        return cls(dict(obj["canonical"]), {k: int(v) for k, v in obj["frequencies"].items()})


def build_merge_map(hashtag_counts: Mapping[str, int], threshold: int = 2) -> MergeMap:
    """Group hashtags whose edit distance is at most ``threshold``.

    Groups are the connected components of the "within threshold" relation,
    so chains a~b~c end up together; every member maps onto the component's
    most frequent string, ties going to the lexicographically smallest.
    Candidate pairs come from shared deletion neighbourhoods (two strings
    within distance k share a string reachable by at most k deletions from
    each) and are confirmed with a banded distance check.
    """
    for tag, c in hashtag_counts.items():
        if c <= 0:
            raise ValueError(f"count for {tag!r} must be positive, got {c}")
    tags = sorted(hashtag_counts)
    parent = {t: t for t in tags}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    if threshold > 0:
        buckets: dict[str, list[str]] = defaultdict(list)
        for t in tags:
            for key in _deletion_keys(t, threshold):
                buckets[key].append(t)
        checked = set()
        for members in buckets.values():
            for a, b in combinations(members, 2):
                ra, rb = find(a), find(b)
                if ra == rb or (a, b) in checked:
                    continue
                checked.add((a, b))
                if within_distance(a, b, threshold):
                    parent[rb] = ra

    groups: dict[str, list[str]] = defaultdict(list)
    for t in tags:
        groups[find(t)].append(t)
    canonical, freqs = {}, {}
    for members in groups.values():
        rep = min(members, key=lambda t: (-hashtag_counts[t], t))
        for t in members:
            canonical[t] = rep
        freqs[rep] = sum(hashtag_counts[t] for t in members)
    return MergeMap(canonical, freqs)


def hashtag_counts(records: Iterable[TaggedRecord]) -> Counter:
    """Number of records using each hashtag."""
    c = Counter()
    for r in records:
        c.update(set(r.hashtags))
    return c


# --- graph builders ---------------------------------------------------------


def build_daily_hashtag_graphs(
    records: Iterable[TaggedRecord],
    merge_map: MergeMap | None = None,
    authors: set[str] | None = None,
) -> dict[dt.date, BipartiteGraph]:
    """One user x hashtag graph per UTC day; ``authors`` optionally restricts the users."""
    per_day: dict[dt.date, set[tuple[str, str]]] = defaultdict(set)
    for r in records:
        if not r.hashtags or (authors is not None and r.author_id not in authors):
            continue
        tags = merge_map.apply(r.hashtags) if merge_map is not None else r.hashtags
        for h in tags:
            per_day[r.day].add((r.author_id, h))
    return {day: BipartiteGraph.from_edges(per_day[day]) for day in sorted(per_day)}


def build_retweet_graph(records: Iterable[TaggedRecord]) -> BipartiteGraph:
    """Verified (top) x non-verified (bottom) authors linked by any retweet between them."""
    edges = set()
    for r in records:
        if r.retweeted_author_id is None or r.retweeted_author_id == r.author_id:
            continue
        if r.author_verified and not r.retweeted_author_verified:
            edges.add((r.author_id, r.retweeted_author_id))
        elif not r.author_verified and r.retweeted_author_verified:
            edges.add((r.retweeted_author_id, r.author_id))
    return BipartiteGraph.from_edges(edges)
